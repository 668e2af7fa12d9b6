//! Training configuration for the alternating scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Simulated trajectories per batch (M).
    pub batch: usize,
    /// Flow samples per step served to the coefficient functions (M').
    pub mu_samples: usize,
    /// Grid resolution of the frozen per-step density tables (ring runs).
    pub mu_table_cells: usize,
    pub outer_iters: usize,
    pub value_epochs: usize,
    pub flow_epochs: usize,
    pub lr_value: f64,
    pub lr_flow: f64,
    pub conv_tol: f64,
    pub conv_window: usize,
    pub seed: u64,
    /// Terminal-cost-only flow warm-up steps (skipped when g == 0).
    pub warmup_steps: usize,
    /// Pushforward samples per terminal-loss estimate.
    pub terminal_batch: usize,
    /// Steps per likelihood minibatch (0 = every step).
    pub flow_step_batch: usize,
    /// Trajectories per step per likelihood minibatch (0 = the full batch).
    pub flow_sample_batch: usize,
    /// Spline knots per ring block (0 = the default of 16).
    pub flow_knots: usize,
    /// Adam epsilon for the value optimizer.
    pub adam_eps_value: f64,
    /// Adam epsilon for the flow optimizer. Larger values keep weakly
    /// constrained flow parameters from random-walking under the
    /// normalized update (the walk compounds through the block chain).
    pub adam_eps_flow: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 512,
            mu_samples: 512,
            mu_table_cells: 1024,
            outer_iters: 30,
            value_epochs: 200,
            flow_epochs: 200,
            lr_value: 1e-3,
            lr_flow: 1e-3,
            conv_tol: 1e-3,
            conv_window: 3,
            seed: 0,
            warmup_steps: 200,
            terminal_batch: 128,
            flow_step_batch: 0,
            flow_sample_batch: 0,
            flow_knots: 0,
            adam_eps_value: 1e-8,
            adam_eps_flow: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0
            || self.mu_samples == 0
            || self.outer_iters == 0
            || self.value_epochs == 0
            || self.flow_epochs == 0
            || self.terminal_batch == 0
        {
            return Err(Error::invalid("all training counts must be at least 1"));
        }
        if !(self.lr_value > 0.0) || !(self.lr_flow > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::invalid("conv_tol must be positive"));
        }
        if self.conv_window < 2 {
            return Err(Error::invalid("conv_window must be at least 2"));
        }
        if self.mu_table_cells < 64 {
            return Err(Error::invalid("mu_table_cells must be at least 64"));
        }
        Ok(())
    }
}

/// True when the relative spread of the total loss over the last `window`
/// outer iterations falls below `tol`.
pub fn converged(history: &[f64], tol: f64, window: usize) -> bool {
    if window < 2 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = tail.last().unwrap().abs().max(1.0);
    (hi - lo) / scale < tol
}
