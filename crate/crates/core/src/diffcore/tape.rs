//! Reverse-mode differentiation over a recorded primitive tape.
//!
//! Losses are scalars over many parameters, so we record vector-valued
//! primitives during the forward pass and sweep the tape backwards once.
//! Nodes hold small `f64` vectors in a shared arena; parameters enter as
//! leaf nodes referencing the active [`ParamStore`], and their adjoints
//! accumulate into a gradient buffer with the store's layout.
//!
//! Everything is 64-bit and reductions run in fixed left-to-right order, so
//! repeated evaluation of the same loss is bitwise identical.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::params::{ParamStore, SegmentId};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Tanh,
    Relu,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Square,
    Neg,
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone)]
enum Op {
    Const,
    Param { seg_off: u32 },
    Affine { w: Var, b: Var, x: Var },
    Unary { kind: UnaryKind, x: Var },
    Binary { kind: BinKind, a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    MulBroadcast { x: Var, s: Var },
    Sum { x: Var },
    Mean { x: Var },
    Dot { a: Var, b: Var },
    Cumsum { x: Var },
    Slice { x: Var, from: u32 },
    Concat { parts: Box<[Var]> },
    Gather { x: Var, perm: Arc<[u32]> },
    /// Mean of exp(-|x - sample_j|^2) over a frozen sample cloud.
    Interaction { x: Var, samples: Arc<[f64]> },
    /// Periodic Catmull-Rom lookup of a frozen scalar field on the unit ring.
    RingInterp { x: Var, table: Arc<RingTable> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param { .. } => "param",
            Op::Affine { .. } => "affine",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Tanh => "tanh",
                UnaryKind::Relu => "relu",
                UnaryKind::Exp => "exp",
                UnaryKind::Ln => "log",
                UnaryKind::Sqrt => "sqrt",
                UnaryKind::Sin => "sin",
                UnaryKind::Square => "square",
                UnaryKind::Neg => "neg",
            },
            Op::Binary { kind, .. } => match kind {
                BinKind::Add => "add",
                BinKind::Sub => "sub",
                BinKind::Mul => "mul",
                BinKind::Div => "div",
            },
            Op::Scale { .. } => "scale",
            Op::AddConst { .. } => "add_const",
            Op::MulBroadcast { .. } => "mul_broadcast",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Dot { .. } => "dot",
            Op::Cumsum { .. } => "cumsum",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::Interaction { .. } => "interaction_cost",
            Op::RingInterp { .. } => "ring_interp",
        }
    }
}

struct Node {
    op: Op,
    off: u32,
    len: u32,
}

/// Frozen periodic scalar field on [0, 1), sampled on a uniform grid and
/// interpolated with a Catmull-Rom cubic (C1, analytic derivative).
#[derive(Debug, Clone)]
pub struct RingTable {
    values: Vec<f64>,
}

impl RingTable {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.len() >= 4, "ring table needs at least 4 samples");
        Self { values }
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self::new((0..n).map(|j| f(j as f64 / n as f64)).collect())
    }

    /// Value and d(value)/dx at x (x taken mod 1).
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.values.len();
        let u = (x - x.floor()) * n as f64;
        let i = (u as usize).min(n - 1);
        let t = u - i as f64;
        let p = |k: isize| self.values[(i as isize + k).rem_euclid(n as isize) as usize];
        let (p0, p1, p2, p3) = (p(-1), p(0), p(1), p(2));
        let a = 2.0 * p1;
        let b = p2 - p0;
        let c = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3;
        let d = -p0 + 3.0 * p1 - 3.0 * p2 + p3;
        let val = 0.5 * (a + b * t + c * t * t + d * t * t * t);
        let dval_dt = 0.5 * (b + 2.0 * c * t + 3.0 * d * t * t);
        (val, dval_dt * n as f64)
    }
}

struct Poison {
    op: &'static str,
    node: usize,
}

/// Recording tape bound to one active parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    param_grad: Vec<f64>,
    poison: Option<Poison>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            param_grad: vec![0.0; store.len()],
            poison: None,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Drop recorded nodes but keep the accumulated parameter gradient.
    pub fn reset_nodes(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.poison = None;
    }

    pub fn reset_grad(&mut self) {
        self.param_grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0 as usize];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let s = self.value(v);
        debug_assert_eq!(s.len(), 1);
        s[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len as usize
    }

    pub fn param_grad(&self) -> &[f64] {
        &self.param_grad
    }

    pub fn check(&self) -> Result<()> {
        match &self.poison {
            None => Ok(()),
            Some(p) => Err(Error::numeric(
                p.op,
                format!("non-finite value at node {}", p.node),
            )),
        }
    }

    fn push(&mut self, op: Op, len: usize) -> (Var, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        self.nodes.push(Node {
            op,
            off: off as u32,
            len: len as u32,
        });
        (Var((self.nodes.len() - 1) as u32), off)
    }

    #[inline]
    fn seal(&mut self, v: Var) -> Var {
        if self.poison.is_none() {
            let n = &self.nodes[v.0 as usize];
            let s = &self.vals[n.off as usize..(n.off + n.len) as usize];
            if !s.iter().all(|x| x.is_finite()) {
                self.poison = Some(Poison {
                    op: n.op.name(),
                    node: v.0 as usize,
                });
            }
        }
        v
    }

    fn span(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0 as usize];
        (n.off as usize, n.len as usize)
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn param(&mut self, id: SegmentId) -> Var {
        let meta = self.store.segment_meta(id);
        let (seg_off, seg_len) = (meta.offset, meta.len);
        let (v, off) = self.push(
            Op::Param {
                seg_off: seg_off as u32,
            },
            seg_len,
        );
        self.vals[off..off + seg_len]
            .copy_from_slice(&self.store.values()[seg_off..seg_off + seg_len]);
        self.seal(v)
    }

    pub fn constant(&mut self, xs: &[f64]) -> Var {
        let (v, off) = self.push(Op::Const, xs.len());
        self.vals[off..off + xs.len()].copy_from_slice(xs);
        self.seal(v)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(&[x])
    }

    // ── primitives ──────────────────────────────────────────────────

    /// y = W·x + b with W row-major of shape (len(b), len(x)).
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Var {
        let (wo, wl) = self.span(w);
        let (bo, out) = self.span(b);
        let (xo, inp) = self.span(x);
        assert_eq!(wl, out * inp, "affine weight shape mismatch");
        let (v, off) = self.push(Op::Affine { w, b, x }, out);
        for r in 0..out {
            let mut acc = self.vals[bo + r];
            let row = wo + r * inp;
            for c in 0..inp {
                acc += self.vals[row + c] * self.vals[xo + c];
            }
            self.vals[off + r] = acc;
        }
        self.seal(v)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let (xo, len) = self.span(x);
        let (v, off) = self.push(Op::Unary { kind, x }, len);
        for i in 0..len {
            let a = self.vals[xo + i];
            self.vals[off + i] = match kind {
                UnaryKind::Tanh => a.tanh(),
                UnaryKind::Relu => a.max(0.0),
                UnaryKind::Exp => a.exp(),
                UnaryKind::Ln => a.ln(),
                UnaryKind::Sqrt => a.sqrt(),
                UnaryKind::Sin => a.sin(),
                UnaryKind::Square => a * a,
                UnaryKind::Neg => -a,
            };
        }
        self.seal(v)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Ln, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sin, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }
    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Var {
        let (ao, la) = self.span(a);
        let (bo, lb) = self.span(b);
        assert_eq!(la, lb, "elementwise length mismatch");
        let (v, off) = self.push(Op::Binary { kind, a, b }, la);
        for i in 0..la {
            let (x, y) = (self.vals[ao + i], self.vals[bo + i]);
            self.vals[off + i] = match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
            };
        }
        self.seal(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (xo, len) = self.span(x);
        let (v, off) = self.push(Op::Scale { x, c }, len);
        for i in 0..len {
            self.vals[off + i] = self.vals[xo + i] * c;
        }
        self.seal(v)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let (xo, len) = self.span(x);
        let (v, off) = self.push(Op::AddConst { x }, len);
        for i in 0..len {
            self.vals[off + i] = self.vals[xo + i] + c;
        }
        self.seal(v)
    }

    /// Vector times a scalar node: y_i = x_i * s.
    pub fn mul_bs(&mut self, x: Var, s: Var) -> Var {
        let (xo, len) = self.span(x);
        let (so, sl) = self.span(s);
        assert_eq!(sl, 1, "broadcast factor must be scalar");
        let (v, off) = self.push(Op::MulBroadcast { x, s }, len);
        let sv = self.vals[so];
        for i in 0..len {
            self.vals[off + i] = self.vals[xo + i] * sv;
        }
        self.seal(v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let (xo, len) = self.span(x);
        let (v, off) = self.push(Op::Sum { x }, 1);
        let mut acc = 0.0;
        for i in 0..len {
            acc += self.vals[xo + i];
        }
        self.vals[off] = acc;
        self.seal(v)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let (xo, len) = self.span(x);
        assert!(len > 0, "mean of empty vector");
        let (v, off) = self.push(Op::Mean { x }, 1);
        let mut acc = 0.0;
        for i in 0..len {
            acc += self.vals[xo + i];
        }
        self.vals[off] = acc / len as f64;
        self.seal(v)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ao, la) = self.span(a);
        let (bo, lb) = self.span(b);
        assert_eq!(la, lb, "dot length mismatch");
        let (v, off) = self.push(Op::Dot { a, b }, 1);
        let mut acc = 0.0;
        for i in 0..la {
            acc += self.vals[ao + i] * self.vals[bo + i];
        }
        self.vals[off] = acc;
        self.seal(v)
    }

    pub fn cumsum(&mut self, x: Var) -> Var {
        let (xo, len) = self.span(x);
        let (v, off) = self.push(Op::Cumsum { x }, len);
        let mut acc = 0.0;
        for i in 0..len {
            acc += self.vals[xo + i];
            self.vals[off + i] = acc;
        }
        self.seal(v)
    }

    pub fn slice(&mut self, x: Var, from: usize, len: usize) -> Var {
        let (xo, xl) = self.span(x);
        assert!(from + len <= xl, "slice out of range");
        let (v, off) = self.push(
            Op::Slice {
                x,
                from: from as u32,
            },
            len,
        );
        for i in 0..len {
            self.vals[off + i] = self.vals[xo + from + i];
        }
        self.seal(v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total: usize = parts.iter().map(|&p| self.span(p).1).sum();
        let (v, off) = self.push(
            Op::Concat {
                parts: parts.to_vec().into_boxed_slice(),
            },
            total,
        );
        let mut cursor = off;
        for &p in parts {
            let (po, pl) = self.span(p);
            for i in 0..pl {
                self.vals[cursor + i] = self.vals[po + i];
            }
            cursor += pl;
        }
        self.seal(v)
    }

    /// y[i] = x[perm[i]]; perm must be a permutation.
    pub fn gather(&mut self, x: Var, perm: &Arc<[u32]>) -> Var {
        let (xo, xl) = self.span(x);
        assert_eq!(xl, perm.len(), "gather permutation length mismatch");
        let (v, off) = self.push(
            Op::Gather {
                x,
                perm: Arc::clone(perm),
            },
            xl,
        );
        for (i, &p) in perm.iter().enumerate() {
            self.vals[off + i] = self.vals[xo + p as usize];
        }
        self.seal(v)
    }

    /// Mean of exp(-|x - s_j|^2) over the frozen samples (flat, row-major).
    pub fn interaction_cost(&mut self, x: Var, samples: &Arc<[f64]>) -> Var {
        let (xo, d) = self.span(x);
        assert!(d > 0 && samples.len() % d == 0, "sample cloud shape mismatch");
        let m = samples.len() / d;
        assert!(m >= 1, "interaction_cost needs at least one sample");
        let (v, off) = self.push(
            Op::Interaction {
                x,
                samples: Arc::clone(samples),
            },
            1,
        );
        let mut acc = 0.0;
        for j in 0..m {
            let mut sq = 0.0;
            for k in 0..d {
                let dxx = self.vals[xo + k] - samples[j * d + k];
                sq += dxx * dxx;
            }
            acc += (-sq).exp();
        }
        self.vals[off] = acc / m as f64;
        self.seal(v)
    }

    /// Frozen ring-field lookup (scalar in, scalar out).
    pub fn ring_interp(&mut self, x: Var, table: &Arc<RingTable>) -> Var {
        let (xo, len) = self.span(x);
        assert_eq!(len, 1, "ring_interp takes a scalar position");
        let (v, off) = self.push(
            Op::RingInterp {
                x,
                table: Arc::clone(table),
            },
            1,
        );
        let (val, _) = table.eval(self.vals[xo]);
        self.vals[off] = val;
        self.seal(v)
    }

    // ── reverse sweep ───────────────────────────────────────────────

    /// Accumulate d(root)/d(params) into the parameter gradient buffer.
    /// `root` must be a scalar node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check()?;
        assert_eq!(self.len_of(root), 1, "backward root must be scalar");
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        let (ro, _) = self.span(root);
        self.adj[ro] = 1.0;

        for idx in (0..=root.0 as usize).rev() {
            let (off, len, op) = {
                let n = &self.nodes[idx];
                (n.off as usize, n.len as usize, n.op.clone())
            };
            match op {
                Op::Const => {}
                Op::Param { seg_off } => {
                    let so = seg_off as usize;
                    for i in 0..len {
                        self.param_grad[so + i] += self.adj[off + i];
                    }
                }
                Op::Affine { w, b, x } => {
                    let (wo, _) = self.span(w);
                    let (bo, out) = self.span(b);
                    let (xo, inp) = self.span(x);
                    debug_assert_eq!(out, len);
                    for r in 0..out {
                        let g = self.adj[off + r];
                        if g == 0.0 {
                            continue;
                        }
                        self.adj[bo + r] += g;
                        let row = wo + r * inp;
                        for c in 0..inp {
                            self.adj[row + c] += g * self.vals[xo + c];
                            self.adj[xo + c] += g * self.vals[row + c];
                        }
                    }
                }
                Op::Unary { kind, x } => {
                    let (xo, _) = self.span(x);
                    for i in 0..len {
                        let g = self.adj[off + i];
                        if g == 0.0 {
                            continue;
                        }
                        let xi = self.vals[xo + i];
                        let yi = self.vals[off + i];
                        self.adj[xo + i] += match kind {
                            UnaryKind::Tanh => g * (1.0 - yi * yi),
                            UnaryKind::Relu => {
                                if xi > 0.0 {
                                    g
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Exp => g * yi,
                            UnaryKind::Ln => g / xi,
                            UnaryKind::Sqrt => g / (2.0 * yi),
                            UnaryKind::Sin => g * xi.cos(),
                            UnaryKind::Square => g * 2.0 * xi,
                            UnaryKind::Neg => -g,
                        };
                    }
                }
                Op::Binary { kind, a, b } => {
                    let (ao, _) = self.span(a);
                    let (bo, _) = self.span(b);
                    for i in 0..len {
                        let g = self.adj[off + i];
                        if g == 0.0 {
                            continue;
                        }
                        match kind {
                            BinKind::Add => {
                                self.adj[ao + i] += g;
                                self.adj[bo + i] += g;
                            }
                            BinKind::Sub => {
                                self.adj[ao + i] += g;
                                self.adj[bo + i] -= g;
                            }
                            BinKind::Mul => {
                                self.adj[ao + i] += g * self.vals[bo + i];
                                self.adj[bo + i] += g * self.vals[ao + i];
                            }
                            BinKind::Div => {
                                let bv = self.vals[bo + i];
                                self.adj[ao + i] += g / bv;
                                self.adj[bo + i] -= g * self.vals[ao + i] / (bv * bv);
                            }
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let (xo, _) = self.span(x);
                    for i in 0..len {
                        self.adj[xo + i] += self.adj[off + i] * c;
                    }
                }
                Op::AddConst { x, .. } => {
                    let (xo, _) = self.span(x);
                    for i in 0..len {
                        self.adj[xo + i] += self.adj[off + i];
                    }
                }
                Op::MulBroadcast { x, s } => {
                    let (xo, _) = self.span(x);
                    let (so, _) = self.span(s);
                    let sv = self.vals[so];
                    for i in 0..len {
                        let g = self.adj[off + i];
                        if g != 0.0 {
                            self.adj[xo + i] += g * sv;
                            self.adj[so] += g * self.vals[xo + i];
                        }
                    }
                }
                Op::Sum { x } => {
                    let (xo, xl) = self.span(x);
                    let g = self.adj[off];
                    if g != 0.0 {
                        for i in 0..xl {
                            self.adj[xo + i] += g;
                        }
                    }
                }
                Op::Mean { x } => {
                    let (xo, xl) = self.span(x);
                    let g = self.adj[off] / xl as f64;
                    if g != 0.0 {
                        for i in 0..xl {
                            self.adj[xo + i] += g;
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let (ao, la) = self.span(a);
                    let (bo, _) = self.span(b);
                    let g = self.adj[off];
                    if g != 0.0 {
                        for i in 0..la {
                            self.adj[ao + i] += g * self.vals[bo + i];
                            self.adj[bo + i] += g * self.vals[ao + i];
                        }
                    }
                }
                Op::Cumsum { x } => {
                    let (xo, xl) = self.span(x);
                    // gx[j] = sum of gy[i] for i >= j.
                    let mut acc = 0.0;
                    for i in (0..xl).rev() {
                        acc += self.adj[off + i];
                        self.adj[xo + i] += acc;
                    }
                }
                Op::Slice { x, from } => {
                    let (xo, _) = self.span(x);
                    let f = from as usize;
                    for i in 0..len {
                        self.adj[xo + f + i] += self.adj[off + i];
                    }
                }
                Op::Concat { parts } => {
                    let mut cursor = off;
                    for &p in parts.iter() {
                        let (po, pl) = self.span(p);
                        for i in 0..pl {
                            self.adj[po + i] += self.adj[cursor + i];
                        }
                        cursor += pl;
                    }
                }
                Op::Gather { x, perm } => {
                    let (xo, _) = self.span(x);
                    for (i, &p) in perm.iter().enumerate() {
                        self.adj[xo + p as usize] += self.adj[off + i];
                    }
                }
                Op::Interaction { x, samples } => {
                    let (xo, d) = self.span(x);
                    let g = self.adj[off];
                    if g != 0.0 {
                        let m = samples.len() / d;
                        let w = g / m as f64;
                        for j in 0..m {
                            let mut sq = 0.0;
                            for k in 0..d {
                                let dxx = self.vals[xo + k] - samples[j * d + k];
                                sq += dxx * dxx;
                            }
                            let e = (-sq).exp();
                            for k in 0..d {
                                let dxx = self.vals[xo + k] - samples[j * d + k];
                                self.adj[xo + k] += w * e * (-2.0 * dxx);
                            }
                        }
                    }
                }
                Op::RingInterp { x, table } => {
                    let (xo, _) = self.span(x);
                    let g = self.adj[off];
                    if g != 0.0 {
                        let (_, slope) = table.eval(self.vals[xo]);
                        self.adj[xo] += g * slope;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Evaluate a tape-built scalar loss and its gradient with respect to every
/// parameter in `store`.
pub fn value_and_grad<F>(store: &ParamStore, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape) -> Var,
{
    let mut tape = Tape::new(store);
    let root = build(&mut tape);
    tape.check()?;
    let value = tape.scalar_value(root);
    tape.backward(root)?;
    let grad = tape.param_grad().to_vec();
    for (i, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::numeric("backward", format!("gradient {i} is {g}")));
        }
    }
    Ok((value, grad))
}

/// Gradient of a tape-built scalar loss.
pub fn grad<F>(store: &ParamStore, build: F) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape) -> Var,
{
    value_and_grad(store, build).map(|(_, g)| g)
}

/// Forward-only evaluation of a tape-built scalar loss.
pub fn loss_value<F>(store: &ParamStore, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape) -> Var,
{
    let mut tape = Tape::new(store);
    let root = build(&mut tape);
    tape.check()?;
    Ok(tape.scalar_value(root))
}

/// Compare the tape gradient against central finite differences.
///
/// Returns max over parameters of |grad_i - fd_i| / max(1, |fd_i|).
pub fn fd_check<F>(store: &ParamStore, build: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape) -> Var,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("fd_check eps must be > 0, got {eps}")));
    }
    let (_, grad) = value_and_grad(store, &build)?;
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for i in 0..store.len() {
        let orig = store.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = loss_value(&probe, &build)?;
        probe.values_mut()[i] = orig - eps;
        let down = loss_value(&probe, &build)?;
        probe.values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let err = (grad[i] - fd).abs() / fd.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
