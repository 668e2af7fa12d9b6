//! The `reference` command: run the finite-difference solver standalone
//! and emit its density/value paths in the shared snapshot format.

use std::path::Path;

use nfmkv_core::error::{Error, Result};
use nfmkv_core::flows::BaseDensity;
use nfmkv_core::reference::solve_traffic_fd;
use nfmkv_core::sde::TimeGrid;

use crate::artifacts::{self, Manifest};

/// Compact initial-density spec: `uniform`, `sin:AMP[,FREQ]`, or
/// `wgm:W:MEAN:STD[;W:MEAN:STD...]`.
pub fn parse_mu0(spec: &str) -> Result<BaseDensity> {
    if spec == "uniform" {
        return Ok(BaseDensity::UniformRing);
    }
    if let Some(rest) = spec.strip_prefix("sin:") {
        let parts: Vec<&str> = rest.split(',').collect();
        let amp: f64 = parts[0]
            .parse()
            .map_err(|_| Error::invalid(format!("bad sinusoid amplitude `{}`", parts[0])))?;
        let freq: u32 = if parts.len() > 1 {
            parts[1]
                .parse()
                .map_err(|_| Error::invalid(format!("bad sinusoid frequency `{}`", parts[1])))?
        } else {
            1
        };
        let b = BaseDensity::SinusoidRing { amp, freq };
        b.validate()?;
        return Ok(b);
    }
    if let Some(rest) = spec.strip_prefix("wgm:") {
        let (mut weights, mut means, mut stds) = (Vec::new(), Vec::new(), Vec::new());
        for comp in rest.split(';') {
            let parts: Vec<&str> = comp.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::invalid(format!("bad mixture component `{comp}`")));
            }
            let get = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::invalid(format!("bad number `{s}`")))
            };
            weights.push(get(parts[0])?);
            means.push(get(parts[1])?);
            stds.push(get(parts[2])?);
        }
        let b = BaseDensity::WrappedGaussianMixture { weights, means, stds };
        b.validate()?;
        return Ok(b);
    }
    Err(Error::invalid(format!(
        "unknown initial-density spec `{spec}` (expected uniform | sin:... | wgm:...)"
    )))
}

#[allow(clippy::too_many_arguments)]
pub fn run_reference(
    cells: usize,
    sigma: f64,
    mu0_spec: &str,
    steps: usize,
    horizon: f64,
    tol: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mu0 = parse_mu0(mu0_spec)?;
    let grid = TimeGrid::new(horizon, steps)?;
    // Validate inputs before touching the output directory.
    let solution = solve_traffic_fd(cells, &grid, sigma, &mu0, tol, 600)?;

    std::fs::create_dir_all(out_dir)?;
    Manifest::new("reference", seed, None).write(out_dir)?;
    artifacts::write_density_csv(
        &out_dir.join("reference_density.csv"),
        1,
        (0..=solution.steps).flat_map(|n| {
            let sol = &solution;
            (0..sol.cells).map(move |j| {
                (
                    n,
                    n as f64 * sol.dt,
                    vec![sol.cell_center(j)],
                    sol.density_at(n)[j],
                )
            })
        }),
    )?;
    artifacts::write_density_csv(
        &out_dir.join("reference_value.csv"),
        1,
        (0..=solution.steps).flat_map(|n| {
            let sol = &solution;
            (0..sol.cells).map(move |j| {
                (
                    n,
                    n as f64 * sol.dt,
                    vec![sol.cell_center(j)],
                    sol.value_at(n)[j],
                )
            })
        }),
    )?;
    println!(
        "reference solve: {} cells, {} steps, residual {:.3e} after {} sweeps",
        solution.cells,
        solution.steps,
        solution.picard_residual,
        solution.residual_history.len()
    );
    Ok(())
}
