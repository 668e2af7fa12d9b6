//! Euler-Maruyama forward simulation coupled to the backward value rollout.
//!
//! The whole step recursion is recorded on the tape: the drift contains the
//! control, the control contains the z-nets, so value-parameter gradients
//! must flow through the state path as well as through the rollout.
//! Forward-only callers build the same tape and skip the backward sweep,
//! which keeps one source of truth for the dynamics.

use crate::diffcore::{MlpScratch, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::problems::{MfgProblem, MuSnapshot};
use crate::stream::StreamKey;

use super::value_nets::ValueNets;
use super::wiener::WienerBatch;

/// States beyond this magnitude abort the simulation with diagnostics.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Inputs shared by every sample of one simulation batch.
pub struct SimContext<'a> {
    pub problem: &'a MfgProblem,
    pub mu: &'a MuSnapshot,
    pub wiener: &'a WienerBatch,
    pub x0_key: StreamKey,
}

pub struct PathVars {
    pub states: Vec<Var>,
    pub values: Vec<Var>,
    pub zvals: Vec<Var>,
    pub controls: Vec<Var>,
}

/// Record sample m's forward path and value rollout on the tape.
pub fn build_path(
    tape: &mut Tape,
    ctx: &SimContext,
    nets: &ValueNets,
    m: usize,
) -> Result<PathVars> {
    let problem = ctx.problem;
    let d = problem.dim();
    let grid = problem.grid();
    let n_steps = grid.steps;
    debug_assert_eq!(ctx.wiener.steps, n_steps);
    debug_assert_eq!(ctx.wiener.dim, d);
    let dt = grid.dt();
    let sigma = problem.sigma();
    let inv_sigma = 1.0 / sigma;

    let mut x0 = vec![0.0; d];
    problem.mu0().sample_into(ctx.x0_key, m as u64, &mut x0);
    if problem.is_ring() {
        for v in x0.iter_mut() {
            *v -= v.floor();
            if *v >= 1.0 {
                *v = 0.0;
            }
        }
    }
    let mut x = tape.constant(&x0);

    let mut states = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut zvals = Vec::with_capacity(n_steps);
    let mut controls = Vec::with_capacity(n_steps);

    states.push(x);
    let mut u = {
        let out = nets.u0.forward_tape(tape, x);
        tape.sum(out)
    };
    values.push(u);

    for n in 0..n_steps {
        let mu_n = ctx.mu.view(n);
        let z = nets.z[n].forward_tape(tape, x);
        let zeta = tape.scale(z, inv_sigma);
        let alpha = problem.optimal_control_tape(tape, x, zeta, &mu_n);
        let f = problem.running_cost_tape(tape, x, alpha, &mu_n);
        let drift = problem.drift_tape(tape, x, alpha, &mu_n);

        let dw = tape.constant(ctx.wiener.increment(m, n));
        let d1 = tape.scale(drift, dt);
        let d2 = tape.scale(dw, sigma);
        let moved = tape.add(x, d1);
        x = tape.add(moved, d2);
        if problem.is_ring() {
            x = wrap_ring_tape(tape, x);
        }
        tape.check()?;
        let worst = tape
            .value(x)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if worst > DIVERGENCE_GUARD {
            return Err(Error::Diverged {
                step: n + 1,
                sample: m,
                magnitude: worst,
            });
        }

        let fdt = tape.scale(f, -dt);
        let zdw = tape.dot(z, dw);
        let u1 = tape.add(u, fdt);
        u = tape.add(u1, zdw);

        states.push(x);
        values.push(u);
        zvals.push(z);
        controls.push(alpha);
    }

    Ok(PathVars {
        states,
        values,
        zvals,
        controls,
    })
}

fn wrap_ring_tape(tape: &mut Tape, x: Var) -> Var {
    // Shipped ring problems are one-dimensional.
    debug_assert_eq!(tape.len_of(x), 1);
    let v = tape.value(x)[0];
    let mut w = v - v.floor();
    if w >= 1.0 {
        w = 0.0;
    }
    tape.add_const(x, w - v)
}

/// Sample m's terminal-matching loss |u_T - g(X_T, mu_T)|^2 on the tape.
pub fn mkv_sample_loss(
    tape: &mut Tape,
    ctx: &SimContext,
    nets: &ValueNets,
    m: usize,
) -> Result<Var> {
    let path = build_path(tape, ctx, nets, m)?;
    let n = ctx.problem.grid().steps;
    let mu_t = ctx.mu.view(n);
    let x_t = *path.states.last().unwrap();
    let g = ctx.problem.terminal_cost_tape(tape, x_t, &mu_t);
    let u_t = *path.values.last().unwrap();
    let r = tape.sub(u_t, g);
    Ok(tape.square(r))
}

/// Simulated batch: states (steps+1, m, d), value rollouts (steps+1, m),
/// adjoint outputs and controls (steps, m, d).
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub m: usize,
    pub steps: usize,
    pub dim: usize,
    pub states: Vec<f64>,
    pub values: Vec<f64>,
    pub zvals: Vec<f64>,
    pub controls: Vec<f64>,
    pub wiener_provenance: u64,
    pub dt: f64,
}

impl TrajectoryBatch {
    pub fn state(&self, m: usize, n: usize) -> &[f64] {
        let base = (n * self.m + m) * self.dim;
        &self.states[base..base + self.dim]
    }

    /// Contiguous flat (m, d) states at one step.
    pub fn states_at_step(&self, n: usize) -> &[f64] {
        let base = n * self.m * self.dim;
        &self.states[base..base + self.m * self.dim]
    }

    pub fn value(&self, m: usize, n: usize) -> f64 {
        self.values[n * self.m + m]
    }

    pub fn control(&self, m: usize, n: usize) -> &[f64] {
        let base = (n * self.m + m) * self.dim;
        &self.controls[base..base + self.dim]
    }

    pub fn terminal_values(&self) -> &[f64] {
        &self.values[self.steps * self.m..]
    }

    /// Largest control magnitude over the whole batch.
    pub fn max_control_norm(&self) -> f64 {
        self.controls
            .chunks_exact(self.dim)
            .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Run the batch forward (no gradients) and materialize it.
pub fn simulate_forward(
    ctx: &SimContext,
    value_store: &ParamStore,
    nets: &ValueNets,
) -> Result<TrajectoryBatch> {
    let m_total = ctx.wiener.m;
    let n_steps = ctx.problem.grid().steps;
    let d = ctx.problem.dim();
    let mut batch = TrajectoryBatch {
        m: m_total,
        steps: n_steps,
        dim: d,
        states: vec![0.0; (n_steps + 1) * m_total * d],
        values: vec![0.0; (n_steps + 1) * m_total],
        zvals: vec![0.0; n_steps * m_total * d],
        controls: vec![0.0; n_steps * m_total * d],
        wiener_provenance: ctx.wiener.provenance,
        dt: ctx.problem.grid().dt(),
    };
    let mut tape = Tape::new(value_store);
    for m in 0..m_total {
        tape.reset_nodes();
        let path = build_path(&mut tape, ctx, nets, m)?;
        for n in 0..=n_steps {
            let base = (n * m_total + m) * d;
            batch.states[base..base + d].copy_from_slice(tape.value(path.states[n]));
            batch.values[n * m_total + m] = tape.scalar_value(path.values[n]);
            if n < n_steps {
                batch.zvals[base..base + d].copy_from_slice(tape.value(path.zvals[n]));
                batch.controls[base..base + d].copy_from_slice(tape.value(path.controls[n]));
            }
        }
    }
    Ok(batch)
}

/// Recompute the value rollout along recorded states; fills values in the
/// batch and returns the terminal row.
pub fn rollout_value(
    problem: &MfgProblem,
    nets: &ValueNets,
    traj: &mut TrajectoryBatch,
    value_store: &ParamStore,
    mu: &MuSnapshot,
    wiener: &WienerBatch,
) -> Result<Vec<f64>> {
    let d = problem.dim();
    let dt = problem.grid().dt();
    let inv_sigma = 1.0 / problem.sigma();
    let mut scratch = MlpScratch::default();
    let (mut zbuf, mut abuf, mut ubuf) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..traj.m {
        nets.u0
            .forward_into(value_store, traj.state(m, 0), &mut scratch, &mut ubuf)?;
        let mut u = ubuf[0];
        traj.values[m] = u;
        for n in 0..traj.steps {
            let x = traj.state(m, n).to_vec();
            nets.z[n].forward_into(value_store, &x, &mut scratch, &mut zbuf)?;
            let zeta: Vec<f64> = zbuf.iter().map(|z| z * inv_sigma).collect();
            let mu_n = mu.view(n);
            problem.optimal_control(&x, &zeta, &mu_n, &mut abuf);
            let f = problem.running_cost(&x, &abuf, &mu_n);
            let dw = wiener.increment(m, n);
            let mut zdw = 0.0;
            for k in 0..d {
                zdw += zbuf[k] * dw[k];
            }
            u = (u + f * (-dt)) + zdw;
            traj.values[(n + 1) * traj.m + m] = u;
        }
    }
    Ok(traj.terminal_values().to_vec())
}

/// Mean squared terminal mismatch (1/M) sum |u_T,i - g(X_T,i, mu_T)|^2.
pub fn mkv_loss(
    u_terminal: &[f64],
    traj: &TrajectoryBatch,
    problem: &MfgProblem,
    mu: &MuSnapshot,
) -> f64 {
    let mu_t = mu.view(traj.steps);
    let mut total = 0.0;
    for (m, u) in u_terminal.iter().enumerate() {
        let g = problem.terminal_cost(traj.state(m, traj.steps), &mu_t);
        let r = u - g;
        total += r * r;
    }
    total / u_terminal.len() as f64
}
