//! Evaluation battery over a trained flow and trajectory batch: volumetric
//! checks of the density path, consecutive-step transport distances, and
//! the realized control cost.

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::flows::TimeIndexedFlow;
use crate::problems::{MfgProblem, MuSnapshot};
use crate::sde::TrajectoryBatch;
use crate::stream::StreamKey;

use super::wasserstein::wasserstein;

#[derive(Debug, Clone)]
pub struct DensityIntegral {
    pub integral: f64,
    /// log10 |integral - 1|, floored at -16.
    pub log_diff: f64,
    /// False when the mesh boundary still carries density above 1e-6.
    pub coverage_ok: bool,
}

fn log_diff(integral: f64) -> f64 {
    (integral - 1.0).abs().max(1e-16).log10()
}

/// Trapezoid quadrature of the step-n density. Rings use the full unit
/// circle; planar flows get a box spanning 6 sample standard deviations
/// around the sample mean per coordinate (d <= 2 only).
pub fn density_integral(
    flow: &TimeIndexedFlow,
    store: &ParamStore,
    n: usize,
    cells: usize,
    key: StreamKey,
) -> Result<DensityIntegral> {
    match flow.dim() {
        1 if flow.is_ring() => {
            let mut total = 0.0;
            for j in 0..cells {
                let x = j as f64 / cells as f64;
                total += flow.logprob_at_step(store, n, &[x])?.exp();
            }
            let integral = total / cells as f64;
            Ok(DensityIntegral {
                integral,
                log_diff: log_diff(integral),
                coverage_ok: true,
            })
        }
        1 | 2 => {
            let d = flow.dim();
            let probe = 2048;
            let samples = flow.sample_at_step(store, n, probe, key)?;
            let (mut mean, mut var) = (vec![0.0; d], vec![0.0; d]);
            for row in samples.chunks_exact(d) {
                for k in 0..d {
                    mean[k] += row[k];
                }
            }
            mean.iter_mut().for_each(|v| *v /= probe as f64);
            for row in samples.chunks_exact(d) {
                for k in 0..d {
                    var[k] += (row[k] - mean[k]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= probe as f64);

            // Eight sample standard deviations: comfortably past the 6-sigma
            // coverage floor even when training has skewed the tails.
            let half: Vec<f64> = var.iter().map(|v| 8.0 * v.sqrt()).collect();
            let h: Vec<f64> = half.iter().map(|w| 2.0 * w / cells as f64).collect();
            let mut total = 0.0;
            let mut boundary_max = 0.0f64;
            let mut x = vec![0.0; d];
            if d == 1 {
                for i in 0..=cells {
                    x[0] = mean[0] - half[0] + i as f64 * h[0];
                    let dens = flow.logprob_at_step(store, n, &x)?.exp();
                    let w = if i == 0 || i == cells { 0.5 } else { 1.0 };
                    total += w * dens;
                    if i == 0 || i == cells {
                        boundary_max = boundary_max.max(dens);
                    }
                }
                total *= h[0];
            } else {
                for i in 0..=cells {
                    for j in 0..=cells {
                        x[0] = mean[0] - half[0] + i as f64 * h[0];
                        x[1] = mean[1] - half[1] + j as f64 * h[1];
                        let dens = flow.logprob_at_step(store, n, &x)?.exp();
                        let w = trapezoid_weight(i, cells) * trapezoid_weight(j, cells);
                        total += w * dens;
                        if i == 0 || i == cells || j == 0 || j == cells {
                            boundary_max = boundary_max.max(dens);
                        }
                    }
                }
                total *= h[0] * h[1];
            }
            Ok(DensityIntegral {
                integral: total,
                log_diff: log_diff(total),
                coverage_ok: boundary_max < 1e-6,
            })
        }
        d => Err(Error::invalid(format!(
            "direct meshing is limited to d <= 2 (flow has d = {d}); use the projected density"
        ))),
    }
}

fn trapezoid_weight(i: usize, cells: usize) -> f64 {
    if i == 0 || i == cells {
        0.5
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedDensity {
    pub bins: usize,
    /// Normalized histogram density over the first two coordinates,
    /// lightly smoothed, row-major (bins, bins).
    pub grid: Vec<f64>,
    pub x0_range: (f64, f64),
    pub x1_range: (f64, f64),
    pub integral: f64,
    pub log_diff: f64,
}

/// Accumulate high-dimensional samples onto their first two coordinates.
pub fn projected_density_2d(samples: &[f64], dim: usize, bins: usize) -> Result<ProjectedDensity> {
    if dim < 2 {
        return Err(Error::invalid("projection needs at least two coordinates"));
    }
    let m = samples.len() / dim;
    if m < 1 {
        return Err(Error::invalid("empty sample set"));
    }
    let (mut mean, mut var) = ([0.0f64; 2], [0.0f64; 2]);
    for row in samples.chunks_exact(dim) {
        mean[0] += row[0];
        mean[1] += row[1];
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    for row in samples.chunks_exact(dim) {
        var[0] += (row[0] - mean[0]).powi(2);
        var[1] += (row[1] - mean[1]).powi(2);
    }
    var.iter_mut().for_each(|v| *v /= m as f64);
    let half = [
        (6.0 * var[0].sqrt()).max(1e-9),
        (6.0 * var[1].sqrt()).max(1e-9),
    ];
    let lo = [mean[0] - half[0], mean[1] - half[1]];
    let cell = [2.0 * half[0] / bins as f64, 2.0 * half[1] / bins as f64];

    let mut hist = vec![0.0f64; bins * bins];
    let mut kept = 0usize;
    for row in samples.chunks_exact(dim) {
        let i = ((row[0] - lo[0]) / cell[0]).floor();
        let j = ((row[1] - lo[1]) / cell[1]).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < bins && (j as usize) < bins {
            hist[i as usize * bins + j as usize] += 1.0;
            kept += 1;
        }
    }
    let area = cell[0] * cell[1];
    let norm = m as f64 * area;
    hist.iter_mut().for_each(|v| *v /= norm);
    let _ = kept;

    // 3x3 box smoothing (zero beyond the box), then trapezoid quadrature of
    // the smoothed field at cell centers.
    let mut smooth = vec![0.0f64; bins * bins];
    for i in 0..bins {
        for j in 0..bins {
            let mut acc = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < bins && (jj as usize) < bins {
                        acc += hist[ii as usize * bins + jj as usize];
                    }
                }
            }
            smooth[i * bins + j] = acc / 9.0;
        }
    }
    let mut integral = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let w = trapezoid_weight(i, bins - 1) * trapezoid_weight(j, bins - 1);
            integral += w * smooth[i * bins + j];
        }
    }
    integral *= area;

    Ok(ProjectedDensity {
        bins,
        grid: smooth,
        x0_range: (lo[0], lo[0] + 2.0 * half[0]),
        x1_range: (lo[1], lo[1] + 2.0 * half[1]),
        integral,
        log_diff: log_diff(integral),
    })
}

#[derive(Debug, Clone)]
pub struct ConsecutiveWdist {
    pub distances: Vec<f64>,
    pub mean: f64,
}

/// W1 between the flow marginals at consecutive steps, estimated on a
/// common base-sample stream per pair (one incremental pass).
pub fn consecutive_wdist(
    flow: &TimeIndexedFlow,
    store: &ParamStore,
    m: usize,
    key: StreamKey,
) -> Result<ConsecutiveWdist> {
    let clouds = flow.sample_paths(store, m, key)?;
    let mut distances = Vec::with_capacity(flow.steps());
    for pair in clouds.windows(2) {
        distances.push(wasserstein(&pair[0], &pair[1], flow.dim(), 1)?);
    }
    let mean = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    Ok(ConsecutiveWdist { distances, mean })
}

/// Realized control cost along simulated trajectories:
/// (1/M) sum_m [ sum_n f(t_n, X, mu, alpha) dt + g(X_T, mu_T) ].
pub fn realized_cost(problem: &MfgProblem, traj: &TrajectoryBatch, mu: &MuSnapshot) -> f64 {
    let dt = traj.dt;
    let mut total = 0.0;
    for m in 0..traj.m {
        let mut acc = 0.0;
        for n in 0..traj.steps {
            let f = problem.running_cost(traj.state(m, n), traj.control(m, n), &mu.view(n));
            acc += f * dt;
        }
        acc += problem.terminal_cost(traj.state(m, traj.steps), &mu.view(traj.steps));
        total += acc;
    }
    total / traj.m as f64
}
