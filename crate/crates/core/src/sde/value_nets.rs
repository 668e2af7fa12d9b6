//! Value-process networks: one net for the initial value function u(0, .)
//! and one per-step net for the adjoint surrogate Z_n = [d_x u]' sigma.

use crate::diffcore::{Mlp, MlpSpec, ParamStore};
use crate::stream::StreamKey;

#[derive(Debug, Clone)]
pub struct ValueNets {
    pub u0: Mlp,
    pub z: Vec<Mlp>,
}

impl ValueNets {
    /// Register u0: R^d -> R and N nets z_n: R^d -> R^d.
    pub fn register(
        store: &mut ParamStore,
        dim: usize,
        steps: usize,
        u0_hidden: &[usize],
        z_hidden: &[usize],
    ) -> Self {
        let mut u0_widths = vec![dim];
        u0_widths.extend_from_slice(u0_hidden);
        u0_widths.push(1);
        let u0 = Mlp::register(store, "value.u0", MlpSpec::tanh(u0_widths));
        let z = (0..steps)
            .map(|n| {
                let mut w = vec![dim];
                w.extend_from_slice(z_hidden);
                w.push(dim);
                Mlp::register(store, &format!("value.z{n}"), MlpSpec::tanh(w))
            })
            .collect();
        ValueNets { u0, z }
    }

    pub fn init(&self, store: &mut ParamStore, key: StreamKey) {
        self.u0.init(store, key.child(0));
        for (n, net) in self.z.iter().enumerate() {
            net.init(store, key.child(1 + n as u64));
        }
    }

    pub fn steps(&self) -> usize {
        self.z.len()
    }

    pub fn dim(&self) -> usize {
        self.u0.input_dim()
    }

    /// Default hidden widths by dimension.
    pub fn default_hidden(dim: usize) -> (Vec<usize>, Vec<usize>) {
        if dim >= 16 {
            (vec![64, 64], vec![64])
        } else {
            (vec![32, 32], vec![32])
        }
    }
}
