//! Time-indexed flow: the block prefix through step n transports the base
//! density to the population density at time t_n. Sampling runs the prefix
//! forward; exact log-density runs it backward and accumulates inverse
//! log-determinants.

use crate::diffcore::{MlpScratch, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::stream::StreamKey;

use super::base::BaseDensity;
use super::block::{FlowBlock, MafBlock, SplineBlock};

#[derive(Debug, Clone)]
pub struct TimeIndexedFlow {
    base: BaseDensity,
    dim: usize,
    steps: usize,
    blocks_per_step: usize,
    blocks: Vec<FlowBlock>,
}

impl TimeIndexedFlow {
    /// Euclidean-domain flow: each time step is `pairs` repetitions of
    /// (reversal permute, autoregressive affine). With an even `pairs` the
    /// reversals cancel within the step, so a zero-initialized step group
    /// is exactly the identity and the untrained prefix realizes the base
    /// density at every step.
    pub fn euclidean(
        store: &mut ParamStore,
        base: BaseDensity,
        steps: usize,
        pairs: usize,
        hidden: usize,
    ) -> Self {
        let dim = base.dim();
        let mut blocks = Vec::with_capacity(steps * 2 * pairs);
        for n in 0..steps {
            for r in 0..pairs {
                blocks.push(FlowBlock::reversal(dim));
                blocks.push(FlowBlock::MafAffine(MafBlock::register(
                    store,
                    &format!("flow.s{n}.m{r}"),
                    dim,
                    hidden,
                )));
            }
        }
        TimeIndexedFlow {
            base,
            dim,
            steps,
            blocks_per_step: 2 * pairs,
            blocks,
        }
    }

    /// Ring-domain flow: one circular spline per time step.
    pub fn ring(store: &mut ParamStore, base: BaseDensity, steps: usize, knots: usize) -> Self {
        Self::ring_with(store, base, steps, knots, true)
    }

    /// Ring flow with a choice of learnable knot slopes. Pinned slopes cut
    /// each block's weakly constrained parameter pool, which matters in
    /// long chains fitted from modest sample counts.
    pub fn ring_with(
        store: &mut ParamStore,
        base: BaseDensity,
        steps: usize,
        knots: usize,
        learn_slopes: bool,
    ) -> Self {
        assert!(base.is_ring(), "ring flow needs a ring base density");
        let blocks = (0..steps)
            .map(|n| {
                FlowBlock::CircularSpline(SplineBlock::register(
                    store,
                    &format!("flow.s{n}.spline"),
                    knots,
                    learn_slopes,
                ))
            })
            .collect();
        TimeIndexedFlow {
            base,
            dim: 1,
            steps,
            blocks_per_step: 1,
            blocks,
        }
    }

    /// Every block starts as the identity, so the untrained prefix realizes
    /// the base density at every step.
    pub fn init(&self, store: &mut ParamStore, key: StreamKey) {
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                FlowBlock::MafAffine(m) => m.init(store, key.child(i as u64)),
                FlowBlock::CircularSpline(s) => s.init(store, key.child(i as u64)),
                FlowBlock::Permute { .. } => {}
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn base(&self) -> &BaseDensity {
        &self.base
    }

    pub fn is_ring(&self) -> bool {
        self.base.is_ring()
    }

    pub fn blocks(&self) -> &[FlowBlock] {
        &self.blocks
    }

    fn prefix(&self, n: usize) -> &[FlowBlock] {
        &self.blocks[..n * self.blocks_per_step]
    }

    /// M pushforward samples of the step-n density, flat row-major (m, dim).
    pub fn sample_at_step(
        &self,
        store: &ParamStore,
        n: usize,
        m: usize,
        key: StreamKey,
    ) -> Result<Vec<f64>> {
        self.check_step(n)?;
        let mut out = Vec::with_capacity(m * self.dim);
        let mut cur = vec![0.0; self.dim];
        let mut next = Vec::with_capacity(self.dim);
        let mut scratch = MlpScratch::default();
        for i in 0..m {
            self.base.sample_into(key, i as u64, &mut cur);
            for b in self.prefix(n) {
                b.forward_raw(store, &cur, &mut scratch, &mut next)?;
                std::mem::swap(&mut cur, &mut next);
            }
            out.extend_from_slice(&cur);
        }
        Ok(out)
    }

    /// One base draw per sample pushed incrementally through every step:
    /// entry n holds M samples of the step-n density (marginals exact,
    /// coupled across steps through the shared base draw).
    pub fn sample_paths(
        &self,
        store: &ParamStore,
        m: usize,
        key: StreamKey,
    ) -> Result<Vec<Vec<f64>>> {
        let mut snapshots = Vec::with_capacity(self.steps + 1);
        let mut cloud = Vec::with_capacity(m * self.dim);
        let mut buf = vec![0.0; self.dim];
        for i in 0..m {
            self.base.sample_into(key, i as u64, &mut buf);
            cloud.extend_from_slice(&buf);
        }
        snapshots.push(cloud.clone());
        let mut scratch = MlpScratch::default();
        let mut next = Vec::with_capacity(self.dim);
        for n in 0..self.steps {
            let blocks = &self.blocks[n * self.blocks_per_step..(n + 1) * self.blocks_per_step];
            for i in 0..m {
                let row = &mut cloud[i * self.dim..(i + 1) * self.dim];
                for b in blocks {
                    b.forward_raw(store, row, &mut scratch, &mut next)?;
                    row.copy_from_slice(&next);
                }
            }
            snapshots.push(cloud.clone());
        }
        Ok(snapshots)
    }

    /// Exact log-density of the step-n marginal at x.
    pub fn logprob_at_step(&self, store: &ParamStore, n: usize, x: &[f64]) -> Result<f64> {
        self.check_step(n)?;
        self.check_point(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::with_capacity(self.dim);
        let mut scratch = MlpScratch::default();
        let mut corr = 0.0;
        for b in self.prefix(n).iter().rev() {
            corr += b.inverse_raw(store, &cur, &mut scratch, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        let lp = self.base.log_density(&cur) + corr;
        if !lp.is_finite() {
            return Err(Error::numeric("logprob_at_step", format!("log-density {lp}")));
        }
        Ok(lp)
    }

    /// Tape form of [`Self::logprob_at_step`] with x held constant; the
    /// gradient flows to the flow parameters.
    pub fn logprob_at_step_tape(&self, tape: &mut Tape, n: usize, x: &[f64]) -> Var {
        let xv = tape.constant(x);
        self.logprob_at_step_tape_var(tape, n, xv)
    }

    /// Tape log-density with the evaluation point itself on the tape.
    pub fn logprob_at_step_tape_var(&self, tape: &mut Tape, n: usize, x: Var) -> Var {
        let mut cur = x;
        let mut lds: Vec<Var> = Vec::with_capacity(n * self.blocks_per_step + 1);
        for b in self.prefix(n).iter().rev() {
            let (next, ld) = b.inverse_tape(tape, cur);
            cur = next;
            lds.push(ld);
        }
        let base_lp = self.base.log_density_tape(tape, cur);
        lds.push(base_lp);
        let all = tape.concat(&lds);
        tape.sum(all)
    }

    /// Push a (constant or tracked) point through the prefix on the tape.
    pub fn push_to_step_tape(&self, tape: &mut Tape, n: usize, x0: Var) -> Var {
        let mut cur = x0;
        for b in self.prefix(n) {
            let (next, _) = b.forward_tape(tape, cur);
            cur = next;
        }
        cur
    }

    /// Negative log-likelihood of simulated states under the per-step
    /// marginals, averaged over steps and samples. `states[k]` holds the
    /// flat (M, dim) states for step k+1.
    pub fn dis_loss(&self, store: &ParamStore, states: &[&[f64]]) -> Result<f64> {
        if states.len() != self.steps {
            return Err(Error::invalid(format!(
                "dis_loss got {} step batches, flow has {} steps",
                states.len(),
                self.steps
            )));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (k, batch) in states.iter().enumerate() {
            let n = k + 1;
            if batch.len() % self.dim != 0 || batch.is_empty() {
                return Err(Error::invalid("dis_loss state batch shape mismatch"));
            }
            for row in batch.chunks_exact(self.dim) {
                total += self.logprob_at_step(store, n, row)?;
                count += 1;
            }
        }
        Ok(-total / count as f64)
    }

    /// Mean squared terminal value over M pushforward samples of the
    /// terminal density.
    pub fn terminal_loss<G>(&self, store: &ParamStore, g: G, m: usize, key: StreamKey) -> Result<f64>
    where
        G: Fn(&[f64]) -> f64,
    {
        let samples = self.sample_at_step(store, self.steps, m, key)?;
        let mut total = 0.0;
        for row in samples.chunks_exact(self.dim) {
            let gv = g(row);
            total += gv * gv;
        }
        Ok(total / m as f64)
    }

    fn check_step(&self, n: usize) -> Result<()> {
        if n > self.steps {
            return Err(Error::invalid(format!(
                "step {n} out of range (flow has {} steps)",
                self.steps
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has {} coordinates, flow dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if self.is_ring() && !(0.0..1.0).contains(&x[0]) {
            return Err(Error::invalid(format!("ring point {} outside [0,1)", x[0])));
        }
        Ok(())
    }
}
