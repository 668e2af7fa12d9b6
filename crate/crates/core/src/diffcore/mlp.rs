//! Dense feedforward networks over [`ParamStore`] segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::StreamKey;

use super::params::{ParamStore, SegmentId};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Layer widths from input to output; the activation applies to hidden
/// layers, the output layer is linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an mlp needs at least input and output widths");
        assert!(
            widths[1..].iter().all(|&w| w > 0),
            "hidden/output widths must be positive"
        );
        Self { widths, activation }
    }

    pub fn tanh(widths: Vec<usize>) -> Self {
        Self::new(widths, Activation::Tanh)
    }

    /// Total parameter count: sum over layers of (in + 1) * out.
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }
}

/// Reusable buffers for [`Mlp::forward_into`].
#[derive(Debug, Default)]
pub struct MlpScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(SegmentId, SegmentId)>,
}

impl Mlp {
    /// Register weight/bias segments named `{prefix}.w{l}` / `{prefix}.b{l}`.
    pub fn register(store: &mut ParamStore, prefix: &str, spec: MlpSpec) -> Self {
        let mut layers = Vec::new();
        for (l, w) in spec.widths.windows(2).enumerate() {
            let wid = store.add_segment(format!("{prefix}.w{l}"), w[0] * w[1]);
            let bid = store.add_segment(format!("{prefix}.b{l}"), w[1]);
            layers.push((wid, bid));
        }
        Mlp { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    /// Scaled-uniform weight init, zero biases. Deterministic in the key.
    pub fn init(&self, store: &mut ParamStore, key: StreamKey) {
        self.init_inner(store, key, false);
    }

    /// Same, but the output layer starts at exactly zero. Used where the
    /// surrounding construction must start as an identity map.
    pub fn init_final_zero(&self, store: &mut ParamStore, key: StreamKey) {
        self.init_inner(store, key, true);
    }

    fn init_inner(&self, store: &mut ParamStore, key: StreamKey, final_zero: bool) {
        let last = self.layers.len() - 1;
        for (l, (wid, bid)) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let lk = key.child(l as u64);
            let w = store.segment_mut(*wid);
            if final_zero && l == last {
                w.iter_mut().for_each(|v| *v = 0.0);
            } else {
                for (i, v) in w.iter_mut().enumerate() {
                    *v = (2.0 * lk.uniform_at(i as u64) - 1.0) * bound;
                }
            }
            store.segment_mut(*bid).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Plain evaluation. The accumulation order matches the tape path
    /// exactly, so both produce bitwise-identical outputs.
    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = MlpScratch::default();
        let mut out = Vec::new();
        self.forward_into(store, x, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Allocation-free evaluation for hot loops.
    pub fn forward_into(
        &self,
        store: &ParamStore,
        x: &[f64],
        scratch: &mut MlpScratch,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "mlp input has {} values, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        scratch.a.clear();
        scratch.a.extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, (wid, bid)) in self.layers.iter().enumerate() {
            let w = store.segment(*wid);
            let b = store.segment(*bid);
            let (inp, outw) = (self.spec.widths[l], self.spec.widths[l + 1]);
            scratch.b.clear();
            scratch.b.resize(outw, 0.0);
            for r in 0..outw {
                let mut acc = b[r];
                for c in 0..inp {
                    acc += w[r * inp + c] * scratch.a[c];
                }
                scratch.b[r] = acc;
            }
            if l != last {
                for v in scratch.b.iter_mut() {
                    *v = match self.spec.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
        }
        if !scratch.a.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("mlp_forward", "non-finite output"));
        }
        out.clear();
        out.extend_from_slice(&scratch.a);
        Ok(())
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut cur = x;
        for (l, (wid, bid)) in self.layers.iter().enumerate() {
            let w = tape.param(*wid);
            let b = tape.param(*bid);
            cur = tape.affine(w, b, cur);
            if l != last {
                cur = match self.spec.activation {
                    Activation::Tanh => tape.tanh(cur),
                    Activation::Relu => tape.relu(cur),
                };
            }
        }
        cur
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tape;

    #[test]
    fn zero_weights_map_everything_to_zero() {
        let mut s = ParamStore::new();
        let net = Mlp::register(&mut s, "z", MlpSpec::tanh(vec![3, 4, 2]));
        let y = net.forward(&s, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_configured_linear_net() {
        let mut s = ParamStore::new();
        let net = Mlp::register(&mut s, "id", MlpSpec::tanh(vec![2, 2]));
        let wid = s.id_by_name("id.w0").unwrap();
        s.segment_mut(wid).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let y = net.forward(&s, &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn random_net_matches_hand_evaluated_matrix_chain() {
        // Independent oracle: explicit nested-loop evaluation of a 2-2-1 net.
        let mut s = ParamStore::new();
        let net = Mlp::register(&mut s, "n", MlpSpec::tanh(vec![2, 2, 1]));
        net.init(&mut s, StreamKey::root(9).tag("init"));
        let x = [0.4, -0.9];

        let w0 = s.segment(s.id_by_name("n.w0").unwrap()).to_vec();
        let b0 = s.segment(s.id_by_name("n.b0").unwrap()).to_vec();
        let w1 = s.segment(s.id_by_name("n.w1").unwrap()).to_vec();
        let b1 = s.segment(s.id_by_name("n.b1").unwrap()).to_vec();
        let h = [
            (w0[0] * x[0] + w0[1] * x[1] + b0[0]).tanh(),
            (w0[2] * x[0] + w0[3] * x[1] + b0[1]).tanh(),
        ];
        let want = w1[0] * h[0] + w1[1] * h[1] + b1[0];

        let got = net.forward(&s, &x).unwrap()[0];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn wrong_input_dimension_is_invalid_input() {
        let mut s = ParamStore::new();
        let net = Mlp::register(&mut s, "n", MlpSpec::tanh(vec![2, 2]));
        assert!(net.forward(&s, &[1.0]).is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let mk = |seed| {
            let mut s = ParamStore::new();
            let net = Mlp::register(&mut s, "n", MlpSpec::tanh(vec![32, 32, 1]));
            net.init(&mut s, StreamKey::root(seed).tag("init"));
            s
        };
        let a = mk(7);
        let b = mk(7);
        let c = mk(8);
        assert_eq!(a.values(), b.values(), "same seed must match bitwise");
        assert_ne!(a.values(), c.values(), "different seeds must differ");

        let bound = (6.0 / 64.0f64).sqrt();
        let w0 = a.segment(a.id_by_name("n.w0").unwrap());
        assert!(w0.iter().all(|w| w.abs() <= bound), "weights exceed init bound");
        assert!(w0.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn tape_forward_is_bitwise_equal_to_raw() {
        let mut s = ParamStore::new();
        let net = Mlp::register(&mut s, "n", MlpSpec::tanh(vec![3, 16, 3]));
        net.init(&mut s, StreamKey::root(11));
        let x = [0.3, -1.2, 0.8];
        let raw = net.forward(&s, &x).unwrap();
        let mut t = tape::Tape::new(&s);
        let xv = t.constant(&x);
        let y = net.forward_tape(&mut t, xv);
        for (a, b) in raw.iter().zip(t.value(y)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn network_loss_passes_fd_check() {
        let mut s = ParamStore::new();
        let net = Mlp::register(&mut s, "n", MlpSpec::tanh(vec![2, 8, 1]));
        net.init(&mut s, StreamKey::root(3));
        let err = tape::fd_check(
            &s,
            |t| {
                let x = t.constant(&[0.7, -0.4]);
                let y = net.forward_tape(t, x);
                let sq = t.square(y);
                t.sum(sq)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "mlp fd err {err}");
    }
}
