//! Alternating optimization: the value networks train against a frozen
//! density path, then the flow trains against frozen trajectories, until
//! the coupled losses stop moving. Crowd-type problems first warm the flow
//! up on the terminal cost alone so its terminal marginal starts near the
//! target region.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamParams, AdamState, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::flows::TimeIndexedFlow;
use crate::parallel::batch_value_and_grad;
use crate::problems::{Domain, MfgProblem, MuSnapshot};
use crate::sde::{gen_wiener, mkv_sample_loss, simulate_forward, SimContext, TrajectoryBatch, ValueNets};
use crate::stream::StreamKey;

use super::checkpoint::{
    load_checkpoint, named_to_params, params_to_named, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
use super::config::{converged, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub l_mkv: f64,
    pub l_dis: f64,
    pub l_terminal: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub value_secs: f64,
    pub flow_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub history: Vec<OuterRecord>,
    pub value_curves: Vec<Vec<f64>>,
    pub flow_curves: Vec<Vec<f64>>,
    pub warmup_curve: Vec<f64>,
    pub post_warmup_terminal_loss: Option<f64>,
    pub converged: bool,
    pub outer_completed: usize,
    #[serde(skip)]
    pub timings: Timings,
}

pub struct TrainState {
    pub problem: MfgProblem,
    pub config: TrainConfig,
    pub flow: TimeIndexedFlow,
    pub flow_store: ParamStore,
    pub nets: ValueNets,
    pub value_store: ParamStore,
    pub flow_opt: AdamState,
    pub value_opt: AdamState,
    pub outer_index: usize,
    pub draw_counter: u64,
    pub history: Vec<OuterRecord>,
    pub post_warmup_terminal_loss: Option<f64>,
}

/// Default flow depth/width and value-net widths by problem shape.
fn build_models(
    problem: &MfgProblem,
    config: &TrainConfig,
) -> (TimeIndexedFlow, ParamStore, ValueNets, ParamStore) {
    let steps = problem.grid().steps;
    let d = problem.dim();
    let knots = if config.flow_knots == 0 { 16 } else { config.flow_knots };
    let mut flow_store = ParamStore::new();
    let flow = if problem.is_ring() {
        TimeIndexedFlow::ring(&mut flow_store, problem.mu0().clone(), steps, knots)
    } else {
        let hidden = if d > 8 { 8 } else { 32 };
        TimeIndexedFlow::euclidean(&mut flow_store, problem.mu0().clone(), steps, 2, hidden)
    };
    let mut value_store = ParamStore::new();
    let (u0_hidden, z_hidden) = ValueNets::default_hidden(d);
    let nets = ValueNets::register(&mut value_store, d, steps, &u0_hidden, &z_hidden);
    (flow, flow_store, nets, value_store)
}

impl TrainState {
    pub fn new(problem: MfgProblem, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (flow, mut flow_store, nets, mut value_store) = build_models(&problem, &config);
        let root = StreamKey::root(config.seed);
        flow.init(&mut flow_store, root.tag("init-flow"));
        nets.init(&mut value_store, root.tag("init-value"));
        let flow_opt = AdamState::new(flow_store.len());
        let value_opt = AdamState::new(value_store.len());
        Ok(TrainState {
            problem,
            config,
            flow,
            flow_store,
            nets,
            value_store,
            flow_opt,
            value_opt,
            outer_index: 0,
            draw_counter: 0,
            history: Vec::new(),
            post_warmup_terminal_loss: None,
        })
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        let problem = checkpoint.problem.build()?;
        let (flow, mut flow_store, nets, mut value_store) = build_models(&problem, &checkpoint.config);
        named_to_params(&checkpoint.value_params, &mut value_store)?;
        named_to_params(&checkpoint.flow_params, &mut flow_store)?;
        if checkpoint.value_opt.m.len() != value_store.len()
            || checkpoint.flow_opt.m.len() != flow_store.len()
        {
            return Err(Error::Parse {
                field: "optimizer state".into(),
                detail: "length does not match the parameter stores".into(),
            });
        }
        Ok(TrainState {
            problem,
            config: checkpoint.config.clone(),
            flow,
            flow_store,
            nets,
            value_store,
            flow_opt: checkpoint.flow_opt.clone(),
            value_opt: checkpoint.value_opt.clone(),
            outer_index: checkpoint.outer_index,
            draw_counter: checkpoint.draw_counter,
            history: checkpoint.history.clone(),
            post_warmup_terminal_loss: checkpoint.post_warmup_terminal_loss,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            problem: self.problem.descriptor().clone(),
            config: self.config.clone(),
            outer_index: self.outer_index,
            draw_counter: self.draw_counter,
            post_warmup_terminal_loss: self.post_warmup_terminal_loss,
            history: self.history.clone(),
            value_params: params_to_named(&self.value_store),
            flow_params: params_to_named(&self.flow_store),
            value_opt: self.value_opt.clone(),
            flow_opt: self.flow_opt.clone(),
        }
    }

    fn root(&self) -> StreamKey {
        StreamKey::root(self.config.seed)
    }

    fn next_draw(&mut self) -> u64 {
        let d = self.draw_counter;
        self.draw_counter += 1;
        d
    }

    fn has_terminal_cost(&self) -> bool {
        self.problem.domain() == Domain::Euclidean
    }

    /// Frozen-flow snapshot serving the coefficient functions this outer
    /// iteration (re-keyed per outer so sampling noise is not reused).
    pub fn mu_snapshot(&self) -> Result<MuSnapshot> {
        MuSnapshot::from_flow(
            &self.flow,
            &self.flow_store,
            self.config.mu_samples,
            self.config.mu_table_cells,
            self.root().tag("mu").child(self.outer_index as u64),
        )
    }

    /// One terminal-cost item on the tape: push a fixed base draw through
    /// the whole flow and square the terminal cost, scaled by 1/batch.
    fn terminal_item(
        &self,
        tape: &mut Tape,
        key: StreamKey,
        index: usize,
        batch: usize,
        mu: &MuSnapshot,
    ) -> Var {
        let d = self.problem.dim();
        let mut z0 = vec![0.0; d];
        self.problem.mu0().sample_into(key, index as u64, &mut z0);
        let x0 = tape.constant(&z0);
        let x_t = self.flow.push_to_step_tape(tape, self.flow.steps(), x0);
        let g = self
            .problem
            .terminal_cost_tape(tape, x_t, &mu.view(self.flow.steps()));
        let sq = tape.square(g);
        tape.scale(sq, 1.0 / batch as f64)
    }

    /// Plain terminal-loss estimate on a fixed evaluation stream.
    fn eval_terminal_loss(&self, mu: &MuSnapshot) -> Result<f64> {
        if !self.has_terminal_cost() {
            return Ok(0.0);
        }
        let view = mu.view(self.flow.steps());
        self.flow.terminal_loss(
            &self.flow_store,
            |x| self.problem.terminal_cost(x, &view),
            self.config.terminal_batch.max(256),
            self.root().tag("terminal-eval"),
        )
    }

    fn flow_hyper(&self) -> AdamParams {
        AdamParams {
            eps: self.config.adam_eps_flow,
            ..AdamParams::with_lr(self.config.lr_flow)
        }
    }

    fn value_hyper(&self) -> AdamParams {
        AdamParams {
            eps: self.config.adam_eps_value,
            ..AdamParams::with_lr(self.config.lr_value)
        }
    }

    /// Terminal-cost-only warm-up of the flow. Skipped when g == 0.
    pub fn warmup(&mut self) -> Result<Vec<f64>> {
        let mut curve = Vec::new();
        if !self.has_terminal_cost() || self.config.warmup_steps == 0 {
            self.post_warmup_terminal_loss = Some(0.0);
            return Ok(curve);
        }
        let mu = self.mu_snapshot()?;
        let hyper = self.flow_hyper();
        let batch = self.config.terminal_batch;
        for _ in 0..self.config.warmup_steps {
            let draw = self.next_draw();
            let key = self.root().tag("terminal").child(draw);
            let (loss, grad) = {
                let this = &*self;
                batch_value_and_grad(&this.flow_store, batch, |tape, i| {
                    Ok(this.terminal_item(tape, key, i, batch, &mu))
                })?
            };
            self.flow_opt
                .step(self.flow_store.values_mut(), &grad, &hyper)?;
            curve.push(loss);
        }
        let fresh = self.mu_snapshot()?;
        self.post_warmup_terminal_loss = Some(self.eval_terminal_loss(&fresh)?);
        Ok(curve)
    }

    /// Train u(0,.) and the per-step adjoint nets against the frozen flow:
    /// fresh Wiener batch per epoch, simulate, roll out, match the terminal
    /// cost, update the value parameters only.
    pub fn train_value_phase(&mut self, mu: &MuSnapshot) -> Result<Vec<f64>> {
        let hyper = self.value_hyper();
        let m = self.config.batch;
        let d = self.problem.dim();
        let grid = self.problem.grid();
        let mut curve = Vec::with_capacity(self.config.value_epochs);
        for _ in 0..self.config.value_epochs {
            let draw = self.next_draw();
            let wiener = gen_wiener(&grid, m, d, self.root().tag("wiener").child(draw))?;
            let ctx = SimContext {
                problem: &self.problem,
                mu,
                wiener: &wiener,
                x0_key: self.root().tag("x0").child(draw),
            };
            let (loss_sum, mut grad) = {
                let nets = &self.nets;
                batch_value_and_grad(&self.value_store, m, |tape, i| {
                    mkv_sample_loss(tape, &ctx, nets, i)
                })?
            };
            let scale = 1.0 / m as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            self.value_opt
                .step(self.value_store.values_mut(), &grad, &hyper)?;
            curve.push(loss_sum * scale);
        }
        Ok(curve)
    }

    /// Regenerate trajectories from the frozen value networks, then train
    /// the flow on the likelihood of the simulated marginals plus the
    /// terminal cost at its own pushforward samples.
    pub fn train_flow_phase(
        &mut self,
        mu: &MuSnapshot,
    ) -> Result<(Vec<f64>, TrajectoryBatch)> {
        let grid = self.problem.grid();
        let d = self.problem.dim();
        let n_steps = grid.steps;
        let m = self.config.batch;

        let draw = self.next_draw();
        let wiener = gen_wiener(&grid, m, d, self.root().tag("wiener").child(draw))?;
        let ctx = SimContext {
            problem: &self.problem,
            mu,
            wiener: &wiener,
            x0_key: self.root().tag("x0").child(draw),
        };
        let traj = simulate_forward(&ctx, &self.value_store, &self.nets)?;

        let hyper = self.flow_hyper();
        let step_batch = effective(self.config.flow_step_batch, n_steps);
        let sample_batch = effective(self.config.flow_sample_batch, m);
        let with_terminal = self.has_terminal_cost();
        let term_batch = self.config.terminal_batch;

        let mut curve = Vec::with_capacity(self.config.flow_epochs);
        for _ in 0..self.config.flow_epochs {
            let draw = self.next_draw();
            let sel_key = self.root().tag("fbatch").child(draw);
            let steps_sel = choose(n_steps, step_batch, sel_key);
            let mut pairs = Vec::with_capacity(step_batch * sample_batch);
            for (si, s) in steps_sel.iter().enumerate() {
                let n = s + 1; // likelihood runs over steps 1..=N
                for mi in choose(m, sample_batch, sel_key.child(1 + si as u64)) {
                    pairs.push((n, mi));
                }
            }
            let n_pairs = pairs.len();
            let term_key = self.root().tag("terminal").child(draw);
            let items = n_pairs + if with_terminal { term_batch } else { 0 };

            let (loss, grad) = {
                let this = &*self;
                let traj_ref = &traj;
                batch_value_and_grad(&this.flow_store, items, |tape, idx| {
                    if idx < n_pairs {
                        let (n, mi) = pairs[idx];
                        let x = traj_ref.state(mi, n);
                        let lp = this.flow.logprob_at_step_tape(tape, n, x);
                        Ok(tape.scale(lp, -1.0 / n_pairs as f64))
                    } else {
                        Ok(this.terminal_item(tape, term_key, idx - n_pairs, term_batch, mu))
                    }
                })?
            };
            self.flow_opt
                .step(self.flow_store.values_mut(), &grad, &hyper)?;
            curve.push(loss);
        }
        Ok((curve, traj))
    }

    /// Full-batch likelihood of the given trajectories under the current
    /// flow (the recorded per-outer statistic).
    fn eval_dis_loss(&self, traj: &TrajectoryBatch) -> Result<f64> {
        let views: Vec<&[f64]> = (1..=traj.steps).map(|n| traj.states_at_step(n)).collect();
        self.flow.dis_loss(&self.flow_store, &views)
    }
}

fn effective(requested: usize, total: usize) -> usize {
    if requested == 0 {
        total
    } else {
        requested.min(total)
    }
}

/// k distinct indices from 0..n (all of them when k >= n), deterministic
/// in the key (partial Fisher-Yates).
fn choose(n: usize, k: usize, key: StreamKey) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (key.u64_at(i as u64) % (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Run the alternation from the given state until the iteration budget or
/// convergence; checkpoints after every outer iteration when a path is
/// given, including a rescue save on failure.
pub fn run(state: &mut TrainState, checkpoint_path: Option<&Path>) -> Result<TrainReport> {
    let started = Instant::now();
    let mut report = TrainReport {
        history: state.history.clone(),
        value_curves: Vec::new(),
        flow_curves: Vec::new(),
        warmup_curve: Vec::new(),
        post_warmup_terminal_loss: state.post_warmup_terminal_loss,
        converged: false,
        outer_completed: state.outer_index,
        timings: Timings::default(),
    };

    let guard = |state: &TrainState, err: Error| -> Error {
        if let Some(path) = checkpoint_path {
            let _ = save_checkpoint(path, &state.checkpoint());
        }
        Error::TrainingAborted {
            checkpoint: checkpoint_path.map(Path::to_path_buf),
            source: Box::new(err),
        }
    };

    if state.outer_index == 0 && state.post_warmup_terminal_loss.is_none() {
        match state.warmup() {
            Ok(curve) => report.warmup_curve = curve,
            Err(e) => return Err(guard(state, e)),
        }
        report.post_warmup_terminal_loss = state.post_warmup_terminal_loss;
    }

    while state.outer_index < state.config.outer_iters {
        let mu = match state.mu_snapshot() {
            Ok(mu) => mu,
            Err(e) => return Err(guard(state, e)),
        };

        let t0 = Instant::now();
        let value_curve = match state.train_value_phase(&mu) {
            Ok(c) => c,
            Err(e) => return Err(guard(state, e)),
        };
        report.timings.value_secs += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let (flow_curve, traj) = match state.train_flow_phase(&mu) {
            Ok(x) => x,
            Err(e) => return Err(guard(state, e)),
        };
        report.timings.flow_secs += t1.elapsed().as_secs_f64();

        let l_mkv = *value_curve.last().unwrap();
        let l_dis = match state.eval_dis_loss(&traj) {
            Ok(v) => v,
            Err(e) => return Err(guard(state, e)),
        };
        let l_terminal = match state.eval_terminal_loss(&mu) {
            Ok(v) => v,
            Err(e) => return Err(guard(state, e)),
        };
        state.history.push(OuterRecord {
            outer: state.outer_index,
            l_mkv,
            l_dis,
            l_terminal,
            total: l_mkv + l_dis + l_terminal,
        });
        state.outer_index += 1;

        report.value_curves.push(value_curve);
        report.flow_curves.push(flow_curve);

        if let Some(path) = checkpoint_path {
            save_checkpoint(path, &state.checkpoint())?;
        }

        let totals: Vec<f64> = state.history.iter().map(|r| r.total).collect();
        if converged(&totals, state.config.conv_tol, state.config.conv_window) {
            report.converged = true;
            break;
        }
    }

    report.history = state.history.clone();
    report.outer_completed = state.outer_index;
    report.timings.total_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Fresh training run.
pub fn train(
    problem: MfgProblem,
    config: TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<(TrainState, TrainReport)> {
    let mut state = TrainState::new(problem, config)?;
    let report = run(&mut state, checkpoint_path)?;
    Ok((state, report))
}

/// Continue a checkpointed run (bitwise-identical to never having stopped).
pub fn resume(
    checkpoint_file: &Path,
    checkpoint_path: Option<&Path>,
) -> Result<(TrainState, TrainReport)> {
    let checkpoint = load_checkpoint(checkpoint_file)?;
    let mut state = TrainState::from_checkpoint(&checkpoint)?;
    let report = run(&mut state, checkpoint_path)?;
    Ok((state, report))
}

/// Simulate a fresh evaluation batch from a trained state (fixed stream).
pub fn evaluation_batch(state: &TrainState, m: usize) -> Result<(TrajectoryBatch, MuSnapshot)> {
    let mu = state.mu_snapshot()?;
    let wiener = gen_wiener(
        &state.problem.grid(),
        m,
        state.problem.dim(),
        state.root().tag("eval-wiener"),
    )?;
    let ctx = SimContext {
        problem: &state.problem,
        mu: &mu,
        wiener: &wiener,
        x0_key: state.root().tag("eval-x0"),
    };
    let traj = simulate_forward(&ctx, &state.value_store, &state.nets)?;
    Ok((traj, mu))
}

/// Flow samples at every step for export and metrics (fixed stream).
pub fn flow_step_clouds(state: &TrainState, m: usize) -> Result<Vec<Vec<f64>>> {
    state
        .flow
        .sample_paths(&state.flow_store, m, state.root().tag("eval-cloud"))
}

pub fn interaction_cloud(cloud: &[f64]) -> Arc<[f64]> {
    cloud.to_vec().into()
}
