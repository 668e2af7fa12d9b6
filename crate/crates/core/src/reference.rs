//! Finite-difference reference solver for the ring-road problem.
//!
//! Damped Picard iteration on the coupled value/density system: a backward
//! value sweep (implicit diffusion, upwinded Hamiltonian) against the
//! current density path, then a forward conservative density sweep driven
//! by the induced optimal speed field, repeated until the density path
//! stops moving. Advective fluxes telescope around the ring and the
//! implicit diffusion operator has zero row sums, so mass is conserved to
//! roundoff at every step.

use crate::error::{Error, Result};
use crate::flows::BaseDensity;
use crate::sde::TimeGrid;

const PICARD_DAMPING: f64 = 0.5;
const CFL_TARGET: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub cells: usize,
    pub steps: usize,
    pub dx: f64,
    pub dt: f64,
    /// Density, flat (steps+1, cells), cell centers (j + 0.5) / cells.
    pub density: Vec<f64>,
    /// Value function, same layout.
    pub value: Vec<f64>,
    pub picard_residual: f64,
    pub residual_history: Vec<f64>,
}

impl ReferenceSolution {
    pub fn density_at(&self, n: usize) -> &[f64] {
        &self.density[n * self.cells..(n + 1) * self.cells]
    }

    pub fn value_at(&self, n: usize) -> &[f64] {
        &self.value[n * self.cells..(n + 1) * self.cells]
    }

    pub fn cell_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx
    }

    pub fn mass(&self, n: usize) -> f64 {
        self.density_at(n).iter().sum::<f64>() * self.dx
    }
}

pub fn solve_traffic_fd(
    cells: usize,
    grid: &TimeGrid,
    sigma: f64,
    mu0: &BaseDensity,
    picard_tol: f64,
    max_picard: usize,
) -> Result<ReferenceSolution> {
    if cells < 16 {
        return Err(Error::invalid(format!("need at least 16 cells, got {cells}")));
    }
    if !(picard_tol > 0.0) {
        return Err(Error::invalid("picard_tol must be positive"));
    }
    if !mu0.is_ring() {
        return Err(Error::invalid("reference solver needs a ring initial density"));
    }
    mu0.validate()?;

    let n_steps = grid.steps;
    let dx = 1.0 / cells as f64;
    let dt = grid.dt();
    let nu = 0.5 * sigma * sigma;

    // Initial density: cell-center values normalized to exact unit mass.
    let mut rho0: Vec<f64> = (0..cells)
        .map(|j| mu0.log_density(&[(j as f64 + 0.5) * dx]).exp())
        .collect();
    let mass0: f64 = rho0.iter().sum::<f64>() * dx;
    rho0.iter_mut().for_each(|v| *v /= mass0);

    // Density path iterate, flat (n_steps + 1, cells).
    let mut mu = vec![0.0; (n_steps + 1) * cells];
    for n in 0..=n_steps {
        mu[n * cells..(n + 1) * cells].copy_from_slice(&rho0);
    }
    let mut value = vec![0.0; (n_steps + 1) * cells];
    let mut residual_history = Vec::new();
    let mut solver = CyclicDiffusion::new(cells);

    for _iter in 0..max_picard {
        hjb_sweep(&mu, &mut value, cells, n_steps, dx, dt, nu, &mut solver);
        let mu_new = fpk_sweep(&mu, &value, &rho0, cells, n_steps, dx, dt, nu, &mut solver);

        let mut residual = 0.0f64;
        for (a, b) in mu_new.iter().zip(&mu) {
            residual = residual.max((a - b).abs());
        }
        residual_history.push(residual);
        for (cur, new) in mu.iter_mut().zip(&mu_new) {
            *cur = (1.0 - PICARD_DAMPING) * *cur + PICARD_DAMPING * new;
        }
        if residual < picard_tol {
            // One final consistent pass so the returned density path is the
            // exact forward solution for the returned value path.
            hjb_sweep(&mu, &mut value, cells, n_steps, dx, dt, nu, &mut solver);
            let mu_final =
                fpk_sweep(&mu, &value, &rho0, cells, n_steps, dx, dt, nu, &mut solver);
            return Ok(ReferenceSolution {
                cells,
                steps: n_steps,
                dx,
                dt,
                density: mu_final,
                value,
                picard_residual: residual,
                residual_history,
            });
        }
    }
    Err(Error::IterationFailure {
        iters: max_picard,
        last: *residual_history.last().unwrap_or(&f64::NAN),
        history: residual_history,
    })
}

/// Backward value sweep. The optimal speed is b* = 1 - mu - u_x, the
/// Hamiltonian at the optimum is (1 - mu) p - p^2 / 2 with p upwinded
/// along the characteristic speed.
#[allow(clippy::too_many_arguments)]
fn hjb_sweep(
    mu: &[f64],
    value: &mut [f64],
    cells: usize,
    n_steps: usize,
    dx: f64,
    dt: f64,
    nu: f64,
    solver: &mut CyclicDiffusion,
) {
    // Terminal condition g == 0.
    for v in value[n_steps * cells..].iter_mut() {
        *v = 0.0;
    }
    let mut rhs = vec![0.0; cells];
    for n in (0..n_steps).rev() {
        let u_next = &value[(n + 1) * cells..(n + 2) * cells];
        let mu_n = &mu[n * cells..(n + 1) * cells];
        let max_b = max_speed(mu_n, u_next, dx);
        let substeps = cfl_substeps(max_b, dt, dx);
        let sub_dt = dt / substeps as f64;
        let mut cur = u_next.to_vec();
        for _ in 0..substeps {
            for j in 0..cells {
                let jm = (j + cells - 1) % cells;
                let jp = (j + 1) % cells;
                let p_central = (cur[jp] - cur[jm]) / (2.0 * dx);
                let speed = 1.0 - mu_n[j] - p_central;
                let p_up = if speed > 0.0 {
                    (cur[j] - cur[jm]) / dx
                } else {
                    (cur[jp] - cur[j]) / dx
                };
                let h = (1.0 - mu_n[j]) * p_up - 0.5 * p_up * p_up;
                rhs[j] = cur[j] - sub_dt * h;
            }
            solver.solve(nu * sub_dt / (dx * dx), &rhs, &mut cur);
        }
        value[n * cells..(n + 1) * cells].copy_from_slice(&cur);
    }
}

/// Forward conservative density sweep with upwinded advective fluxes and
/// implicit diffusion, driven by the frozen (mu, u) pair.
#[allow(clippy::too_many_arguments)]
fn fpk_sweep(
    mu: &[f64],
    value: &[f64],
    rho0: &[f64],
    cells: usize,
    n_steps: usize,
    dx: f64,
    dt: f64,
    nu: f64,
    solver: &mut CyclicDiffusion,
) -> Vec<f64> {
    let mut out = vec![0.0; (n_steps + 1) * cells];
    out[..cells].copy_from_slice(rho0);
    let mut flux = vec![0.0; cells];
    let mut rhs = vec![0.0; cells];
    for n in 0..n_steps {
        let mu_n = &mu[n * cells..(n + 1) * cells];
        let u_n = &value[n * cells..(n + 1) * cells];
        let max_b = max_speed(mu_n, u_n, dx);
        let substeps = cfl_substeps(max_b, dt, dx);
        let sub_dt = dt / substeps as f64;
        let mut cur = out[n * cells..(n + 1) * cells].to_vec();
        for _ in 0..substeps {
            for j in 0..cells {
                // Face j+1/2: speed from the frozen iterate, mass upwinded
                // from the evolving density.
                let jp = (j + 1) % cells;
                let mu_face = 0.5 * (mu_n[j] + mu_n[jp]);
                let ux_face = (u_n[jp] - u_n[j]) / dx;
                let speed = 1.0 - mu_face - ux_face;
                flux[j] = if speed > 0.0 {
                    speed * cur[j]
                } else {
                    speed * cur[jp]
                };
            }
            for j in 0..cells {
                let jm = (j + cells - 1) % cells;
                rhs[j] = cur[j] - sub_dt / dx * (flux[j] - flux[jm]);
            }
            solver.solve(nu * sub_dt / (dx * dx), &rhs, &mut cur);
        }
        out[(n + 1) * cells..(n + 2) * cells].copy_from_slice(&cur);
    }
    out
}

fn max_speed(mu_n: &[f64], u_n: &[f64], dx: f64) -> f64 {
    let cells = mu_n.len();
    let mut max_b = 0.0f64;
    for j in 0..cells {
        let jp = (j + 1) % cells;
        let ux = (u_n[jp] - u_n[j]) / dx;
        max_b = max_b.max((1.0 - 0.5 * (mu_n[j] + mu_n[jp]) - ux).abs());
    }
    max_b
}

fn cfl_substeps(max_b: f64, dt: f64, dx: f64) -> usize {
    ((max_b * dt / (CFL_TARGET * dx)).ceil() as usize).max(1)
}

/// Solves (I - c D2) v = rhs on the ring, D2 the periodic second
/// difference, via the Sherman-Morrison cyclic Thomas algorithm.
struct CyclicDiffusion {
    n: usize,
    y: Vec<f64>,
    q: Vec<f64>,
    scratch: Vec<f64>,
}

impl CyclicDiffusion {
    fn new(n: usize) -> Self {
        CyclicDiffusion {
            n,
            y: vec![0.0; n],
            q: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    fn solve(&mut self, c: f64, rhs: &[f64], out: &mut Vec<f64>) {
        let n = self.n;
        if c == 0.0 {
            out.clear();
            out.extend_from_slice(rhs);
            return;
        }
        let diag = 1.0 + 2.0 * c;
        let off = -c;
        // A = A' + u v^T with u = (gamma, 0, .., off)^T, v = (1, 0, .., off/gamma)^T.
        let gamma = -diag;
        let b0 = diag - gamma;
        let bn = diag - off * off / gamma;

        self.tridiag(diag, off, b0, bn, rhs, true);
        std::mem::swap(&mut self.y, &mut self.scratch);
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = off;
        self.tridiag(diag, off, b0, bn, &u, false);
        std::mem::swap(&mut self.q, &mut self.scratch);

        let vy = self.y[0] + off / gamma * self.y[n - 1];
        let vq = self.q[0] + off / gamma * self.q[n - 1];
        let factor = vy / (1.0 + vq);
        out.clear();
        out.extend((0..n).map(|j| self.y[j] - factor * self.q[j]));
    }

    /// Thomas algorithm for the non-cyclic part; result in `scratch`.
    fn tridiag(&mut self, diag: f64, off: f64, b0: f64, bn: f64, d: &[f64], _tag: bool) {
        let n = self.n;
        let mut cp = vec![0.0; n];
        let x = &mut self.scratch;
        let mut beta = b0;
        x[0] = d[0] / beta;
        for j in 1..n {
            cp[j - 1] = off / beta;
            beta = if j == n - 1 { bn } else { diag } - off * cp[j - 1];
            x[j] = (d[j] - off * x[j - 1]) / beta;
        }
        for j in (0..n - 1).rev() {
            let next = x[j + 1];
            x[j] -= cp[j] * next;
        }
    }
}

/// Per-grid-point log10 relative error of a density field against the
/// reference, floored at the reference scale and clamped at -16.
#[derive(Debug, Clone)]
pub struct LogError {
    pub cells: usize,
    pub steps: usize,
    /// Flat (steps+1, cells).
    pub eps: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

pub fn log_error<F>(mut density: F, reference: &ReferenceSolution) -> LogError
where
    F: FnMut(usize, f64) -> f64,
{
    let mut eps = Vec::with_capacity((reference.steps + 1) * reference.cells);
    let (mut max, mut sum) = (f64::NEG_INFINITY, 0.0);
    for n in 0..=reference.steps {
        let rho = reference.density_at(n);
        for j in 0..reference.cells {
            let x = reference.cell_center(j);
            let diff = (density(n, x) - rho[j]).abs();
            let rel = diff / rho[j].max(1e-8);
            let e = if rel > 0.0 { rel.log10().max(-16.0) } else { -16.0 };
            eps.push(e);
            max = max.max(e);
            sum += e;
        }
    }
    LogError {
        cells: reference.cells,
        steps: reference.steps,
        mean: sum / eps.len() as f64,
        eps,
        max,
    }
}

/// Sup-norm change of the terminal density under grid doubling, as a ratio
/// between successive refinements: first-order spatial convergence gives a
/// value near 2. The time grid is refined up front so every spatial level
/// shares one time step (otherwise the CFL substepping would fold time
/// error into the spatial study).
pub fn refinement_ratio(
    grid: &TimeGrid,
    sigma: f64,
    mu0: &BaseDensity,
    picard_tol: f64,
    max_picard: usize,
) -> Result<f64> {
    let steps = grid.steps.max(256);
    let grid = &TimeGrid::new(grid.horizon, steps)?;
    let coarse = solve_traffic_fd(64, grid, sigma, mu0, picard_tol, max_picard)?;
    let mid = solve_traffic_fd(128, grid, sigma, mu0, picard_tol, max_picard)?;
    let fine = solve_traffic_fd(256, grid, sigma, mu0, picard_tol, max_picard)?;

    // Coarse centers sit midway between two finer centers.
    let diff_on = |a: &ReferenceSolution, b: &ReferenceSolution| -> f64 {
        let n = a.steps;
        let ra = a.density_at(n);
        let rb = b.density_at(n);
        let mut worst = 0.0f64;
        for j in 0..a.cells {
            let fine_left = rb[2 * j];
            let fine_right = rb[2 * j + 1];
            worst = worst.max((ra[j] - 0.5 * (fine_left + fine_right)).abs());
        }
        worst
    };
    let d_coarse = diff_on(&coarse, &mid);
    let d_mid = diff_on(&mid, &fine);
    Ok(d_coarse / d_mid)
}
