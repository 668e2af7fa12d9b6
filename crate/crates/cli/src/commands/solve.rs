//! The `solve` command: train a run configuration to convergence and leave
//! a complete artifact set behind.

use std::path::Path;

use nfmkv_core::error::Result;
use nfmkv_core::metrics::projected_density_2d;
use nfmkv_core::trainer::{self, TrainState};

use crate::artifacts::{self, Manifest};
use crate::commands::metrics::{compute_metrics, write_metric_artifacts, MetricOptions};
use crate::config::RunConfig;

pub fn run_solve(config_text: &str, config: &RunConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut train_config = config.train.clone();
    if let Some(seed) = seed {
        train_config.seed = seed;
    }
    let problem = config.build_problem()?;

    std::fs::create_dir_all(out_dir)?;
    // The manifest lands before any other artifact.
    Manifest::new("solve", train_config.seed, Some(artifacts::CONFIG_ECHO_FILE))
        .write(out_dir)?;
    std::fs::write(out_dir.join(artifacts::CONFIG_ECHO_FILE), config_text)?;

    let checkpoint_path = out_dir.join(artifacts::CHECKPOINT_FILE);
    let (state, report) = trainer::train(problem, train_config, Some(&checkpoint_path))?;

    std::fs::write(
        out_dir.join(artifacts::TRAIN_REPORT_FILE),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(
        out_dir.join(artifacts::TIMING_FILE),
        serde_json::to_string_pretty(&serde_json::json!({
            "value_secs": report.timings.value_secs,
            "flow_secs": report.timings.flow_secs,
            "total_secs": report.timings.total_secs,
        }))
        .expect("timing serializes"),
    )?;

    export_density(&state, config, out_dir)?;
    export_trajectories(&state, config, out_dir)?;

    let computed = compute_metrics(
        &state,
        config.problem_name(),
        &MetricOptions {
            metric_samples: config.export.metric_samples,
            ..MetricOptions::default()
        },
    )?;
    write_metric_artifacts(out_dir, &state, &computed)?;

    verify_csv_outputs(out_dir)?;
    Ok(())
}

/// Round-trip schema check: every CSV this run wrote must load back.
fn verify_csv_outputs(out_dir: &Path) -> Result<()> {
    artifacts::read_density_csv(&out_dir.join(artifacts::DENSITY_FILE))?;
    artifacts::read_trajectory_csv(&out_dir.join(artifacts::TRAJECTORY_FILE))?;
    for series in ["log_integral.csv", "wdist.csv", "epsilon.csv"] {
        let path = out_dir.join(series);
        if path.is_file() {
            artifacts::read_series_csv(&path)?;
        }
    }
    Ok(())
}

/// Density snapshots at every time step. Rings and planar runs evaluate
/// the exact flow density; high-dimensional runs project sample clouds
/// onto the first two coordinates.
fn export_density(state: &TrainState, config: &RunConfig, out_dir: &Path) -> Result<()> {
    let d = state.problem.dim();
    let grid = state.problem.grid();
    let steps = grid.steps;
    let path = out_dir.join(artifacts::DENSITY_FILE);
    match d {
        1 => {
            let cells = config.density_cells(1);
            let mut rows = Vec::with_capacity((steps + 1) * cells);
            for n in 0..=steps {
                for j in 0..cells {
                    let x = j as f64 / cells as f64;
                    let dens = state
                        .flow
                        .logprob_at_step(&state.flow_store, n, &[x])?
                        .exp();
                    rows.push((n, grid.t(n), vec![x], dens));
                }
            }
            artifacts::write_density_csv(&path, 1, rows.into_iter())
        }
        2 => {
            // Common box over all steps so snapshots are plottable together.
            let cells = if config.export.density_cells > 0 {
                config.export.density_cells
            } else {
                48
            };
            let clouds = trainer::flow_step_clouds(state, 1024)?;
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for cloud in &clouds {
                for row in cloud.chunks_exact(2) {
                    for k in 0..2 {
                        lo[k] = lo[k].min(row[k]);
                        hi[k] = hi[k].max(row[k]);
                    }
                }
            }
            let pad = [(hi[0] - lo[0]) * 0.15 + 0.5, (hi[1] - lo[1]) * 0.15 + 0.5];
            let cell = [
                (hi[0] - lo[0] + 2.0 * pad[0]) / cells as f64,
                (hi[1] - lo[1] + 2.0 * pad[1]) / cells as f64,
            ];
            let mut rows = Vec::with_capacity((steps + 1) * cells * cells);
            for n in 0..=steps {
                for i in 0..cells {
                    for j in 0..cells {
                        let x = [
                            lo[0] - pad[0] + (i as f64 + 0.5) * cell[0],
                            lo[1] - pad[1] + (j as f64 + 0.5) * cell[1],
                        ];
                        let dens = state
                            .flow
                            .logprob_at_step(&state.flow_store, n, &x)?
                            .exp();
                        rows.push((n, grid.t(n), x.to_vec(), dens));
                    }
                }
            }
            artifacts::write_density_csv(&path, 2, rows.into_iter())
        }
        _ => {
            let clouds = trainer::flow_step_clouds(state, 10_000)?;
            let bins = 64;
            let mut rows = Vec::with_capacity((steps + 1) * bins * bins);
            for (n, cloud) in clouds.iter().enumerate() {
                let proj = projected_density_2d(cloud, d, bins)?;
                let c0 = (proj.x0_range.1 - proj.x0_range.0) / bins as f64;
                let c1 = (proj.x1_range.1 - proj.x1_range.0) / bins as f64;
                for i in 0..bins {
                    for j in 0..bins {
                        rows.push((
                            n,
                            grid.t(n),
                            vec![
                                proj.x0_range.0 + (i as f64 + 0.5) * c0,
                                proj.x1_range.0 + (j as f64 + 0.5) * c1,
                            ],
                            proj.grid[i * bins + j],
                        ));
                    }
                }
            }
            artifacts::write_density_csv(&path, 2, rows.into_iter())
        }
    }
}

fn export_trajectories(state: &TrainState, config: &RunConfig, out_dir: &Path) -> Result<()> {
    let want = config.export.trajectories;
    let (traj, _) = trainer::evaluation_batch(state, want.max(1))?;
    let grid = state.problem.grid();
    let d = state.problem.dim();
    let count = want.min(traj.m);
    let mut rows = Vec::with_capacity(count * (traj.steps + 1));
    for m in 0..count {
        for n in 0..=traj.steps {
            rows.push((m, n, grid.t(n), traj.state(m, n).to_vec()));
        }
    }
    artifacts::write_trajectory_csv(
        &out_dir.join(artifacts::TRAJECTORY_FILE),
        d,
        rows.into_iter(),
    )
}
