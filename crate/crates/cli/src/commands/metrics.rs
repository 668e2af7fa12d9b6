//! Metric evaluation over a trained state, reused by `solve` (after
//! training) and by the standalone `metrics` command (from a checkpoint).

use std::path::Path;

use nfmkv_core::error::Result;
use nfmkv_core::metrics::{
    consecutive_wdist, density_integral, projected_density_2d, realized_cost, MetricsReport,
    RunMetrics,
};
use nfmkv_core::problems::Domain;
use nfmkv_core::reference::{log_error, solve_traffic_fd, LogError};
use nfmkv_core::stream::StreamKey;
use nfmkv_core::trainer::{evaluation_batch, flow_step_clouds, TrainState};

use crate::artifacts;

pub struct MetricOptions {
    /// Samples per step for transport distances (capped for the exact
    /// matching path in high dimension).
    pub metric_samples: usize,
    /// Mesh cells per axis for the planar volumetric check.
    pub mesh_cells: usize,
    /// Reference grid cells for ring runs.
    pub reference_cells: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            metric_samples: 512,
            mesh_cells: 200,
            reference_cells: 128,
        }
    }
}

pub struct ComputedMetrics {
    pub run: RunMetrics,
    pub epsilon: Option<LogError>,
}

pub fn compute_metrics(
    state: &TrainState,
    name: &str,
    opts: &MetricOptions,
) -> Result<ComputedMetrics> {
    let problem = &state.problem;
    let d = problem.dim();
    let steps = problem.grid().steps;
    let root = StreamKey::root(state.config.seed).tag("metrics");

    // Per-step volumetric check.
    let mut log_integral = Vec::with_capacity(steps + 1);
    if d <= 2 {
        let cells = if d == 1 && problem.is_ring() {
            512
        } else {
            opts.mesh_cells
        };
        for n in 0..=steps {
            let di = density_integral(
                &state.flow,
                &state.flow_store,
                n,
                cells,
                root.tag("mesh").child(n as u64),
            )?;
            log_integral.push(di.log_diff);
        }
    } else {
        let clouds = flow_step_clouds(state, 10_000)?;
        for cloud in &clouds {
            log_integral.push(projected_density_2d(cloud, d, 64)?.log_diff);
        }
    }

    // Consecutive transport distances on coupled per-step clouds.
    let w_samples = if d > 2 {
        opts.metric_samples.min(256)
    } else {
        opts.metric_samples
    };
    let wd = consecutive_wdist(&state.flow, &state.flow_store, w_samples, root.tag("wdist"))?;

    let mut run = RunMetrics::from_series(name, d, steps, log_integral, wd.distances);

    // Realized control cost on a fixed evaluation batch.
    let (traj, mu) = evaluation_batch(state, opts.metric_samples)?;
    run.realized_cost = Some(realized_cost(problem, &traj, &mu));

    // Ring runs also compare against the finite-difference reference.
    let mut epsilon = None;
    if problem.domain() == Domain::Ring {
        let reference = solve_traffic_fd(
            opts.reference_cells,
            &problem.grid(),
            problem.sigma(),
            problem.mu0(),
            1e-7,
            400,
        )?;
        let err = log_error(
            |n, x| {
                state
                    .flow
                    .logprob_at_step(&state.flow_store, n, &[x])
                    .map(f64::exp)
                    .unwrap_or(f64::NAN)
            },
            &reference,
        );
        run.reference_log_error = Some((err.max, err.mean));
        epsilon = Some(err);
    }

    Ok(ComputedMetrics { run, epsilon })
}

/// Write the report pair plus per-step series CSVs into `dir`.
pub fn write_metric_artifacts(
    dir: &Path,
    state: &TrainState,
    computed: &ComputedMetrics,
) -> Result<()> {
    let grid = state.problem.grid();
    let mut report = MetricsReport::default();
    report.push(computed.run.clone());
    std::fs::write(
        dir.join(artifacts::METRICS_JSON_FILE),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(dir.join(artifacts::METRICS_TEXT_FILE), report.render_table())?;

    artifacts::write_series_csv(
        &dir.join("log_integral.csv"),
        computed
            .run
            .log_integral
            .iter()
            .enumerate()
            .map(|(n, &v)| (n, grid.t(n), v)),
    )?;
    artifacts::write_series_csv(
        &dir.join("wdist.csv"),
        computed
            .run
            .wdist
            .iter()
            .enumerate()
            .map(|(n, &v)| (n, grid.t(n), v)),
    )?;
    if let Some(eps) = &computed.epsilon {
        // Max over space per time level keeps the series 1-D.
        artifacts::write_series_csv(
            &dir.join("epsilon.csv"),
            (0..=eps.steps).map(|n| {
                let row = &eps.eps[n * eps.cells..(n + 1) * eps.cells];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (n, grid.t(n), max)
            }),
        )?;
    }
    Ok(())
}
