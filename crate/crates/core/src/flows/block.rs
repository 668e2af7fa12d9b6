//! Invertible transform blocks.
//!
//! Three kinds ship: an autoregressive affine block whose scale/shift for
//! coordinate i are conditioned on coordinates < i (triangular Jacobian), a
//! fixed permutation, and a monotone rational-quadratic circular spline for
//! ring-valued states. Every block has a plain (`*_raw`) path used by
//! sampling and metrics, and a tape path used inside losses; both compute
//! the same arithmetic.

use std::sync::Arc;

use crate::diffcore::{Mlp, MlpScratch, MlpSpec, ParamStore, SegmentId, Tape, Var};
use crate::error::{Error, Result};
use crate::stream::StreamKey;

/// Log-scales are squashed to (-C, C) smoothly so blocks stay invertible
/// and gradients never die at a hard clamp.
const SCALE_CLAMP: f64 = 5.0;

#[inline]
fn squash(a: f64) -> f64 {
    SCALE_CLAMP * (a / SCALE_CLAMP).tanh()
}

fn squash_tape(tape: &mut Tape, a: Var) -> Var {
    let t = tape.scale(a, 1.0 / SCALE_CLAMP);
    let t = tape.tanh(t);
    tape.scale(t, SCALE_CLAMP)
}

// ── autoregressive affine ──────────────────────────────────────────

/// Per-coordinate conditioner: a bias pair for coordinate 0, a small MLP
/// on the preceding coordinates otherwise. Output is (log-scale, shift).
#[derive(Debug, Clone)]
enum Conditioner {
    Bias(SegmentId),
    Net(Mlp),
}

#[derive(Debug, Clone)]
pub struct MafBlock {
    dim: usize,
    conds: Vec<Conditioner>,
}

impl MafBlock {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize) -> Self {
        let mut conds = Vec::with_capacity(dim);
        for i in 0..dim {
            if i == 0 {
                conds.push(Conditioner::Bias(store.add_segment(format!("{prefix}.c0"), 2)));
            } else {
                conds.push(Conditioner::Net(Mlp::register(
                    store,
                    &format!("{prefix}.c{i}"),
                    MlpSpec::tanh(vec![i, hidden, 2]),
                )));
            }
        }
        MafBlock { dim, conds }
    }

    /// Hidden layers get the scaled-uniform init; output layers start at
    /// zero so the block is exactly the identity.
    pub fn init(&self, store: &mut ParamStore, key: StreamKey) {
        for (i, c) in self.conds.iter().enumerate() {
            match c {
                Conditioner::Bias(id) => store.segment_mut(*id).iter_mut().for_each(|v| *v = 0.0),
                Conditioner::Net(net) => net.init_final_zero(store, key.child(i as u64)),
            }
        }
    }

    fn cond_raw(
        &self,
        store: &ParamStore,
        i: usize,
        prefix: &[f64],
        scratch: &mut MlpScratch,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        match &self.conds[i] {
            Conditioner::Bias(id) => {
                out.clear();
                out.extend_from_slice(store.segment(*id));
                Ok(())
            }
            Conditioner::Net(net) => net.forward_into(store, prefix, scratch, out),
        }
    }

    fn cond_tape(&self, tape: &mut Tape, i: usize, prefix: &[Var]) -> (Var, Var) {
        match &self.conds[i] {
            Conditioner::Bias(id) => {
                let p = tape.param(*id);
                (tape.slice(p, 0, 1), tape.slice(p, 1, 1))
            }
            Conditioner::Net(net) => {
                let input = if prefix.len() == 1 {
                    prefix[0]
                } else {
                    tape.concat(prefix)
                };
                let out = net.forward_tape(tape, input);
                (tape.slice(out, 0, 1), tape.slice(out, 1, 1))
            }
        }
    }

    pub fn forward_raw(
        &self,
        store: &ParamStore,
        x: &[f64],
        scratch: &mut MlpScratch,
        out: &mut Vec<f64>,
    ) -> Result<f64> {
        out.clear();
        out.resize(self.dim, 0.0);
        let mut cond = Vec::with_capacity(2);
        let mut logdet = 0.0;
        for i in 0..self.dim {
            self.cond_raw(store, i, &x[..i], scratch, &mut cond)?;
            let a = squash(cond[0]);
            out[i] = x[i] * a.exp() + cond[1];
            logdet += a;
        }
        Ok(logdet)
    }

    pub fn inverse_raw(
        &self,
        store: &ParamStore,
        y: &[f64],
        scratch: &mut MlpScratch,
        out: &mut Vec<f64>,
    ) -> Result<f64> {
        out.clear();
        out.resize(self.dim, 0.0);
        let mut cond = Vec::with_capacity(2);
        let mut logdet_inv = 0.0;
        for i in 0..self.dim {
            // The conditioner only sees already-reconstructed coordinates,
            // so one sequential pass inverts exactly.
            let (head, rest) = out.split_at_mut(i);
            self.cond_raw(store, i, head, scratch, &mut cond)?;
            let a = squash(cond[0]);
            rest[0] = (y[i] - cond[1]) * (-a).exp();
            logdet_inv -= a;
        }
        Ok(logdet_inv)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let coords: Vec<Var> = (0..self.dim).map(|i| tape.slice(x, i, 1)).collect();
        let mut ys = Vec::with_capacity(self.dim);
        let mut lds = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let (a, m) = self.cond_tape(tape, i, &coords[..i]);
            let sq = squash_tape(tape, a);
            let s = tape.exp(sq);
            let scaled = tape.mul(coords[i], s);
            ys.push(tape.add(scaled, m));
            lds.push(sq);
        }
        let y = tape.concat(&ys);
        let ld_vec = tape.concat(&lds);
        (y, tape.sum(ld_vec))
    }

    pub fn inverse_tape(&self, tape: &mut Tape, y: Var) -> (Var, Var) {
        let mut xs: Vec<Var> = Vec::with_capacity(self.dim);
        let mut lds = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let (a, m) = self.cond_tape(tape, i, &xs[..i]);
            let sq = squash_tape(tape, a);
            let nsq = tape.neg(sq);
            let sinv = tape.exp(nsq);
            let yi = tape.slice(y, i, 1);
            let centered = tape.sub(yi, m);
            xs.push(tape.mul(centered, sinv));
            lds.push(nsq);
        }
        let x = tape.concat(&xs);
        let ld_vec = tape.concat(&lds);
        (x, tape.sum(ld_vec))
    }
}

// ── circular rational-quadratic spline ─────────────────────────────

/// Monotone rational-quadratic spline on the unit ring: K knots with
/// softmax bin widths/heights, squashed-exp knot derivatives with periodic
/// endpoint matching, plus a learnable rotation offset.
#[derive(Debug, Clone)]
pub struct SplineBlock {
    knots: usize,
    w_logits: SegmentId,
    h_logits: SegmentId,
    /// Learnable knot derivatives; with `None` the endpoint slopes are
    /// pinned at one. Free derivatives reshape density inside a bin while
    /// barely moving the likelihood, so in deep chains they act as a pool
    /// of weakly constrained parameters whose jitter compounds
    /// multiplicatively; pinning them trades that variance for a little
    /// within-bin rigidity.
    d_logits: Option<SegmentId>,
    offset: SegmentId,
}

struct SplineTables {
    widths: Vec<f64>,
    heights: Vec<f64>,
    deltas: Vec<f64>, // length knots + 1, deltas[K] = deltas[0]
    xs: Vec<f64>,     // bin right edges, cumulative widths
    ys: Vec<f64>,
    offset: f64,
}

impl SplineBlock {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        knots: usize,
        learn_slopes: bool,
    ) -> Self {
        assert!(knots >= 4, "spline needs at least 4 knots");
        SplineBlock {
            knots,
            w_logits: store.add_segment(format!("{prefix}.w_logits"), knots),
            h_logits: store.add_segment(format!("{prefix}.h_logits"), knots),
            d_logits: learn_slopes
                .then(|| store.add_segment(format!("{prefix}.d_logits"), knots)),
            offset: store.add_segment(format!("{prefix}.offset"), 1),
        }
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    /// Identity init with staggered knots: any width logits give the
    /// identity as long as the height logits match and the slopes are one,
    /// so each block gets its own jittered knot grid. Without the jitter
    /// every block's rational-quadratic seams sit at the same positions
    /// and their curvature kinks stack up through deep compositions.
    pub fn init(&self, store: &mut ParamStore, key: StreamKey) {
        let k = self.knots;
        {
            let w = store.segment_mut(self.w_logits);
            for (i, v) in w.iter_mut().enumerate() {
                *v = 0.6 * (key.uniform_at(i as u64) - 0.5);
            }
        }
        let w = store.segment(self.w_logits).to_vec();
        store.segment_mut(self.h_logits).copy_from_slice(&w);
        if let Some(id) = self.d_logits {
            store.segment_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        store.segment_mut(self.offset).iter_mut().for_each(|v| *v = 0.0);
        debug_assert_eq!(store.segment(self.w_logits).len(), k);
    }

    fn tables(&self, store: &ParamStore) -> SplineTables {
        let softmax = |logits: &[f64]| {
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let widths = softmax(store.segment(self.w_logits));
        let heights = softmax(store.segment(self.h_logits));
        let mut deltas: Vec<f64> = match self.d_logits {
            Some(id) => store.segment(id).iter().map(|&l| squash(l).exp()).collect(),
            None => vec![1.0; self.knots],
        };
        deltas.push(deltas[0]);
        let cumsum = |v: &[f64]| {
            let mut acc = 0.0;
            v.iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect::<Vec<f64>>()
        };
        let xs = cumsum(&widths);
        let ys = cumsum(&heights);
        SplineTables {
            widths,
            heights,
            deltas,
            xs,
            ys,
            offset: store.segment(self.offset)[0],
        }
    }

    fn locate(edges: &[f64], v: f64) -> usize {
        // First bin whose right edge exceeds v; the last bin absorbs
        // cumulative roundoff at the top.
        let mut lo = 0usize;
        let mut hi = edges.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if v < edges[mid] {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    pub fn forward_raw(&self, store: &ParamStore, x: f64) -> Result<(f64, f64)> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::invalid(format!("ring point {x} outside [0,1)")));
        }
        let t = self.tables(store);
        let k = Self::locate(&t.xs, x);
        let x_lo = if k == 0 { 0.0 } else { t.xs[k - 1] };
        let y_lo = if k == 0 { 0.0 } else { t.ys[k - 1] };
        let theta = ((x - x_lo) / t.widths[k]).clamp(0.0, 1.0);
        let (yr, deriv) = rq_eval(theta, t.widths[k], t.heights[k], t.deltas[k], t.deltas[k + 1]);
        let y = wrap_unit(y_lo + yr + t.offset);
        Ok((y, deriv.ln()))
    }

    pub fn inverse_raw(&self, store: &ParamStore, y: f64) -> Result<(f64, f64)> {
        if !(0.0..1.0).contains(&y) {
            return Err(Error::invalid(format!("ring point {y} outside [0,1)")));
        }
        let t = self.tables(store);
        let yr = wrap_unit(y - t.offset);
        let k = Self::locate(&t.ys, yr);
        let x_lo = if k == 0 { 0.0 } else { t.xs[k - 1] };
        let y_lo = if k == 0 { 0.0 } else { t.ys[k - 1] };
        let phi = yr - y_lo;
        let theta = rq_invert(phi, t.widths[k], t.heights[k], t.deltas[k], t.deltas[k + 1])?;
        let (_, deriv) = rq_eval(theta, t.widths[k], t.heights[k], t.deltas[k], t.deltas[k + 1]);
        let x = wrap_unit(x_lo + theta * t.widths[k]);
        Ok((x, -deriv.ln()))
    }

    /// Tape build shared by both directions. Bin choice follows the current
    /// values (constant in the recorded graph); the in-bin algebra is all
    /// tape primitives, so parameter and position gradients are exact.
    fn tape_tables(&self, tape: &mut Tape) -> (Var, Var, Var, Var, Var, Var) {
        let softmax = |tape: &mut Tape, id: SegmentId| {
            let logits = tape.param(id);
            let mx = tape
                .value(logits)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let sh = tape.add_const(logits, -mx);
            let e = tape.exp(sh);
            let s = tape.sum(e);
            let one = tape.scalar(1.0);
            let inv = tape.div(one, s);
            tape.mul_bs(e, inv)
        };
        let widths = softmax(tape, self.w_logits);
        let heights = softmax(tape, self.h_logits);
        let deltas = match self.d_logits {
            Some(id) => {
                let dl = tape.param(id);
                let dsq = squash_tape(tape, dl);
                tape.exp(dsq)
            }
            None => {
                let ones = vec![1.0; self.knots];
                tape.constant(&ones)
            }
        };
        let xs = tape.cumsum(widths);
        let ys = tape.cumsum(heights);
        let offset = tape.param(self.offset);
        (widths, heights, deltas, xs, ys, offset)
    }

    fn bin_parts(
        &self,
        tape: &mut Tape,
        k: usize,
        widths: Var,
        heights: Var,
        deltas: Var,
        xs: Var,
        ys: Var,
    ) -> (Var, Var, Var, Var, Var, Var) {
        let w_k = tape.slice(widths, k, 1);
        let h_k = tape.slice(heights, k, 1);
        let d_k = tape.slice(deltas, k, 1);
        let d_k1 = if k + 1 == self.knots {
            tape.slice(deltas, 0, 1)
        } else {
            tape.slice(deltas, k + 1, 1)
        };
        let x_lo = if k == 0 {
            tape.scalar(0.0)
        } else {
            tape.slice(xs, k - 1, 1)
        };
        let y_lo = if k == 0 {
            tape.scalar(0.0)
        } else {
            tape.slice(ys, k - 1, 1)
        };
        (w_k, h_k, d_k, d_k1, x_lo, y_lo)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let (widths, heights, deltas, xs, ys, offset) = self.tape_tables(tape);
        let xv = tape.scalar_value(x);
        let k = Self::locate(tape.value(xs), xv);
        let (w_k, h_k, d_k, d_k1, x_lo, y_lo) =
            self.bin_parts(tape, k, widths, heights, deltas, xs, ys);

        let dx = tape.sub(x, x_lo);
        let theta = tape.div(dx, w_k);
        let (y_rel, deriv) = rq_eval_tape(tape, theta, w_k, h_k, d_k, d_k1);
        let y0 = tape.add(y_lo, y_rel);
        let y1 = tape.add(y0, offset);
        let y = wrap_unit_tape(tape, y1);
        let ld = tape.ln(deriv);
        (y, ld)
    }

    pub fn inverse_tape(&self, tape: &mut Tape, y: Var) -> (Var, Var) {
        let (widths, heights, deltas, xs, ys, offset) = self.tape_tables(tape);
        let y0 = tape.sub(y, offset);
        let yr = wrap_unit_tape(tape, y0);
        let yrv = tape.scalar_value(yr);
        let k = Self::locate(tape.value(ys), yrv);
        let (w_k, h_k, d_k, d_k1, x_lo, y_lo) =
            self.bin_parts(tape, k, widths, heights, deltas, xs, ys);

        let phi = tape.sub(yr, y_lo);
        let theta = rq_invert_tape(tape, phi, w_k, h_k, d_k, d_k1);
        let (_, deriv) = rq_eval_tape(tape, theta, w_k, h_k, d_k, d_k1);
        let tw = tape.mul(theta, w_k);
        let x = tape.add(x_lo, tw);
        let nld = tape.ln(deriv);
        (x, tape.neg(nld))
    }
}

#[inline]
fn wrap_unit(v: f64) -> f64 {
    let w = v - v.floor();
    // Guard against w == 1.0 from roundoff when v is a hair below an integer.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn wrap_unit_tape(tape: &mut Tape, v: Var) -> Var {
    let val = tape.scalar_value(v);
    let w = wrap_unit(val);
    tape.add_const(v, w - val)
}

/// In-bin rational-quadratic map: value relative to the bin base and dy/dx.
fn rq_eval(theta: f64, w: f64, h: f64, d0: f64, d1: f64) -> (f64, f64) {
    let s = h / w;
    let t1m = theta * (1.0 - theta);
    let denom = s + (d1 + d0 - 2.0 * s) * t1m;
    let y_rel = h * (s * theta * theta + d0 * t1m) / denom;
    let deriv = s * s * (d1 * theta * theta + 2.0 * s * t1m + d0 * (1.0 - theta) * (1.0 - theta))
        / (denom * denom);
    (y_rel, deriv)
}

fn rq_eval_tape(tape: &mut Tape, theta: Var, w: Var, h: Var, d0: Var, d1: Var) -> (Var, Var) {
    let s = tape.div(h, w);
    let one_m = {
        let n = tape.neg(theta);
        tape.add_const(n, 1.0)
    };
    let t1m = tape.mul(theta, one_m);
    let th2 = tape.square(theta);
    let s2 = tape.scale(s, 2.0);
    let dsum = tape.add(d1, d0);
    let dd = tape.sub(dsum, s2);
    let dd_t1m = tape.mul(dd, t1m);
    let denom = tape.add(s, dd_t1m);

    let s_th2 = tape.mul(s, th2);
    let d0_t1m = tape.mul(d0, t1m);
    let num = tape.add(s_th2, d0_t1m);
    let h_num = tape.mul(h, num);
    let y_rel = tape.div(h_num, denom);

    let d1_th2 = tape.mul(d1, th2);
    let s2_t1m = tape.mul(s2, t1m);
    let om2 = tape.square(one_m);
    let d0_om2 = tape.mul(d0, om2);
    let t_a = tape.add(d1_th2, s2_t1m);
    let t_b = tape.add(t_a, d0_om2);
    let ss = tape.square(s);
    let num_d = tape.mul(ss, t_b);
    let den2 = tape.square(denom);
    let deriv = tape.div(num_d, den2);
    (y_rel, deriv)
}

/// Solve the in-bin quadratic for theta given phi = y_rel.
fn rq_invert(phi: f64, w: f64, h: f64, d0: f64, d1: f64) -> Result<f64> {
    let s = h / w;
    let dd = d1 + d0 - 2.0 * s;
    let a = h * (s - d0) + phi * dd;
    let b = h * d0 - phi * dd;
    let c = -s * phi;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::numeric(
            "circular_spline.inverse",
            format!("negative discriminant {disc}"),
        ));
    }
    let theta = 2.0 * c / (-b - disc.sqrt());
    Ok(theta.clamp(0.0, 1.0))
}

fn rq_invert_tape(tape: &mut Tape, phi: Var, w: Var, h: Var, d0: Var, d1: Var) -> Var {
    let s = tape.div(h, w);
    let s2 = tape.scale(s, 2.0);
    let dsum = tape.add(d1, d0);
    let dd = tape.sub(dsum, s2);
    let s_m_d0 = tape.sub(s, d0);
    let h_smd0 = tape.mul(h, s_m_d0);
    let phi_dd = tape.mul(phi, dd);
    let a = tape.add(h_smd0, phi_dd);
    let h_d0 = tape.mul(h, d0);
    let b = tape.sub(h_d0, phi_dd);
    let s_phi = tape.mul(s, phi);
    let c = tape.neg(s_phi);

    let b2 = tape.square(b);
    let ac = tape.mul(a, c);
    let ac4 = tape.scale(ac, 4.0);
    let disc = tape.sub(b2, ac4);
    let root = tape.sqrt(disc);
    let nb = tape.neg(b);
    let den = tape.sub(nb, root);
    let c2 = tape.scale(c, 2.0);
    tape.div(c2, den)
}

// ── block enum ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum FlowBlock {
    MafAffine(MafBlock),
    Permute { perm: Arc<[u32]>, inv: Arc<[u32]> },
    CircularSpline(SplineBlock),
}

impl FlowBlock {
    pub fn permutation(perm: Vec<u32>) -> Self {
        let mut inv = vec![0u32; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p as usize] = i as u32;
        }
        FlowBlock::Permute {
            perm: perm.into(),
            inv: inv.into(),
        }
    }

    pub fn reversal(dim: usize) -> Self {
        Self::permutation((0..dim as u32).rev().collect())
    }

    /// (y, log |det dy/dx|).
    pub fn forward_raw(
        &self,
        store: &ParamStore,
        x: &[f64],
        scratch: &mut MlpScratch,
        out: &mut Vec<f64>,
    ) -> Result<f64> {
        match self {
            FlowBlock::MafAffine(b) => b.forward_raw(store, x, scratch, out),
            FlowBlock::Permute { perm, .. } => {
                out.clear();
                out.extend(perm.iter().map(|&p| x[p as usize]));
                Ok(0.0)
            }
            FlowBlock::CircularSpline(b) => {
                let (y, ld) = b.forward_raw(store, x[0])?;
                out.clear();
                out.push(y);
                Ok(ld)
            }
        }
    }

    /// (x, log |det dx/dy|), the negative of the forward log-det at x.
    pub fn inverse_raw(
        &self,
        store: &ParamStore,
        y: &[f64],
        scratch: &mut MlpScratch,
        out: &mut Vec<f64>,
    ) -> Result<f64> {
        match self {
            FlowBlock::MafAffine(b) => b.inverse_raw(store, y, scratch, out),
            FlowBlock::Permute { inv, .. } => {
                out.clear();
                out.extend(inv.iter().map(|&p| y[p as usize]));
                Ok(0.0)
            }
            FlowBlock::CircularSpline(b) => {
                let (x, ld) = b.inverse_raw(store, y[0])?;
                out.clear();
                out.push(x);
                Ok(ld)
            }
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        match self {
            FlowBlock::MafAffine(b) => b.forward_tape(tape, x),
            FlowBlock::Permute { perm, .. } => {
                let y = tape.gather(x, perm);
                (y, tape.scalar(0.0))
            }
            FlowBlock::CircularSpline(b) => b.forward_tape(tape, x),
        }
    }

    pub fn inverse_tape(&self, tape: &mut Tape, y: Var) -> (Var, Var) {
        match self {
            FlowBlock::MafAffine(b) => b.inverse_tape(tape, y),
            FlowBlock::Permute { inv, .. } => {
                let x = tape.gather(y, inv);
                (x, tape.scalar(0.0))
            }
            FlowBlock::CircularSpline(b) => b.inverse_tape(tape, y),
        }
    }

    pub fn is_ring(&self) -> bool {
        matches!(self, FlowBlock::CircularSpline(_))
    }
}
