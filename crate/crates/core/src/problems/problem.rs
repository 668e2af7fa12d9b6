//! The shipped mean-field game problem statements: drift, running cost,
//! terminal cost, and the closed-form optimal-control rule that minimizes
//! f + b·zeta over the control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::BaseDensity;
use crate::diffcore::{Tape, Var};
use crate::sde::TimeGrid;

use super::mu::MuView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Euclidean,
    Ring,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec<f64>,
    pub lambda: f64,
    pub s_safe: f64,
}

/// Serializable problem statement; `build` reconstructs the full problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProblemDescriptor {
    /// Ring-road congestion: drift is the control, running cost
    /// 0.5 (1 - mu(x) - b)^2, zero terminal cost.
    Traffic {
        grid: TimeGrid,
        sigma: f64,
        mu0: BaseDensity,
    },
    /// Crowd motion: drift is the control, running cost |a|^2 plus the
    /// sampled interaction kernel (plus an optional obstacle bump), and
    /// terminal cost exp(sum of squared distances to the target over the
    /// first `active` coordinates).
    Crowd {
        grid: TimeGrid,
        sigma: f64,
        mu0: BaseDensity,
        target: Vec<f64>,
        active: usize,
        obstacle: Option<Obstacle>,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    Traffic,
    Crowd {
        target: Vec<f64>,
        active: usize,
        obstacle: Option<Obstacle>,
    },
}

#[derive(Debug, Clone)]
pub struct MfgProblem {
    descriptor: ProblemDescriptor,
    dim: usize,
    domain: Domain,
    grid: TimeGrid,
    sigma: f64,
    mu0: BaseDensity,
    kind: Kind,
}

impl ProblemDescriptor {
    pub fn build(&self) -> Result<MfgProblem> {
        match self {
            ProblemDescriptor::Traffic { grid, sigma, mu0 } => {
                mu0.validate()?;
                if !mu0.is_ring() {
                    return Err(Error::invalid("traffic flow needs a ring initial density"));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::invalid("sigma must be positive"));
                }
                Ok(MfgProblem {
                    descriptor: self.clone(),
                    dim: 1,
                    domain: Domain::Ring,
                    grid: *grid,
                    sigma: *sigma,
                    mu0: mu0.clone(),
                    kind: Kind::Traffic,
                })
            }
            ProblemDescriptor::Crowd {
                grid,
                sigma,
                mu0,
                target,
                active,
                obstacle,
            } => {
                mu0.validate()?;
                if mu0.is_ring() {
                    return Err(Error::invalid("crowd motion needs a Euclidean initial density"));
                }
                let dim = mu0.dim();
                if *active == 0 || *active > dim || target.len() != *active {
                    return Err(Error::invalid(format!(
                        "target covers {} of {dim} coordinates but has {} entries",
                        active,
                        target.len()
                    )));
                }
                if let Some(o) = obstacle {
                    if o.center.len() != dim || !(o.lambda > 0.0) || !(o.s_safe > 0.0) {
                        return Err(Error::invalid("malformed obstacle"));
                    }
                }
                if !(*sigma > 0.0) {
                    return Err(Error::invalid("sigma must be positive"));
                }
                Ok(MfgProblem {
                    descriptor: self.clone(),
                    dim,
                    domain: Domain::Euclidean,
                    grid: *grid,
                    sigma: *sigma,
                    mu0: mu0.clone(),
                    kind: Kind::Crowd {
                        target: target.clone(),
                        active: *active,
                        obstacle: obstacle.clone(),
                    },
                })
            }
        }
    }
}

/// Mean of exp(-|x - s_j|^2) over a flat (M, d) sample cloud.
pub fn interaction_cost(x: &[f64], samples: &[f64]) -> f64 {
    let d = x.len();
    let m = samples.len() / d;
    let mut acc = 0.0;
    for j in 0..m {
        let mut sq = 0.0;
        for k in 0..d {
            let dx = x[k] - samples[j * d + k];
            sq += dx * dx;
        }
        acc += (-sq).exp();
    }
    acc / m as f64
}

impl MfgProblem {
    pub fn descriptor(&self) -> &ProblemDescriptor {
        &self.descriptor
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_ring(&self) -> bool {
        self.domain == Domain::Ring
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu0(&self) -> &BaseDensity {
        &self.mu0
    }

    pub fn hamiltonian_tag(&self) -> &'static str {
        match self.kind {
            Kind::Traffic => "quadratic-congestion-matching",
            Kind::Crowd { .. } => "quadratic-control-plus-interaction",
        }
    }

    // ── plain evaluation ────────────────────────────────────────────

    /// Drift b(t, x, mu, alpha); the shipped problems are control-driven.
    pub fn drift(&self, x: &[f64], alpha: &[f64], _mu: &MuView, out: &mut Vec<f64>) {
        let _ = x;
        out.clear();
        out.extend_from_slice(alpha);
    }

    /// Running cost f(t, x, mu, alpha).
    pub fn running_cost(&self, x: &[f64], alpha: &[f64], mu: &MuView) -> f64 {
        match &self.kind {
            Kind::Traffic => {
                let r = 1.0 - mu.density(x[0]) - alpha[0];
                0.5 * r * r
            }
            Kind::Crowd { obstacle, .. } => {
                let mut f = 0.0;
                for a in alpha {
                    f += a * a;
                }
                f += interaction_cost(x, mu.samples);
                if let Some(o) = obstacle {
                    f += obstacle_bump(x, o);
                }
                f
            }
        }
    }

    /// argmin over alpha of f(t,x,mu,alpha) + b(t,x,mu,alpha) . zeta.
    pub fn optimal_control(&self, x: &[f64], zeta: &[f64], mu: &MuView, out: &mut Vec<f64>) {
        out.clear();
        match &self.kind {
            Kind::Traffic => out.push(1.0 - mu.density(x[0]) - zeta[0]),
            Kind::Crowd { .. } => out.extend(zeta.iter().map(|z| -0.5 * z)),
        }
    }

    /// Terminal cost g(x, mu_T).
    pub fn terminal_cost(&self, x: &[f64], _mu: &MuView) -> f64 {
        match &self.kind {
            Kind::Traffic => 0.0,
            Kind::Crowd { target, active, .. } => {
                let mut sq = 0.0;
                for k in 0..*active {
                    let d = x[k] - target[k];
                    sq += d * d;
                }
                sq.exp()
            }
        }
    }

    // ── tape evaluation (same arithmetic, recorded) ─────────────────

    pub fn optimal_control_tape(&self, tape: &mut Tape, x: Var, zeta: Var, mu: &MuView) -> Var {
        match &self.kind {
            Kind::Traffic => {
                let table = mu.ring_density.expect("traffic needs density tables");
                let dens = tape.ring_interp(x, table);
                let dz = tape.add(dens, zeta);
                let neg = tape.neg(dz);
                tape.add_const(neg, 1.0)
            }
            Kind::Crowd { .. } => tape.scale(zeta, -0.5),
        }
    }

    pub fn drift_tape(&self, tape: &mut Tape, _x: Var, alpha: Var, _mu: &MuView) -> Var {
        let _ = tape;
        alpha
    }

    pub fn running_cost_tape(&self, tape: &mut Tape, x: Var, alpha: Var, mu: &MuView) -> Var {
        match &self.kind {
            Kind::Traffic => {
                let table = mu.ring_density.expect("traffic needs density tables");
                let dens = tape.ring_interp(x, table);
                let da = tape.add(dens, alpha);
                let nda = tape.neg(da);
                let r = tape.add_const(nda, 1.0);
                let sq = tape.square(r);
                tape.scale(sq, 0.5)
            }
            Kind::Crowd { obstacle, .. } => {
                let sq = tape.square(alpha);
                let mut f = tape.sum(sq);
                let ic = tape.interaction_cost(x, mu.samples);
                f = tape.add(f, ic);
                if let Some(o) = obstacle {
                    let bump = obstacle_bump_tape(tape, x, o);
                    f = tape.add(f, bump);
                }
                f
            }
        }
    }

    pub fn terminal_cost_tape(&self, tape: &mut Tape, x: Var, _mu: &MuView) -> Var {
        match &self.kind {
            Kind::Traffic => tape.scalar(0.0),
            Kind::Crowd { target, active, .. } => {
                let head = if *active == self.dim {
                    x
                } else {
                    tape.slice(x, 0, *active)
                };
                let t = tape.constant(target);
                let diff = tape.sub(head, t);
                let sq = tape.square(diff);
                let s = tape.sum(sq);
                tape.exp(s)
            }
        }
    }
}

fn obstacle_bump(x: &[f64], o: &Obstacle) -> f64 {
    let mut sq = 0.0;
    for k in 0..x.len() {
        let d = x[k] - o.center[k];
        sq += d * d;
    }
    o.lambda * (-sq / (o.s_safe * o.s_safe)).exp()
}

fn obstacle_bump_tape(tape: &mut Tape, x: Var, o: &Obstacle) -> Var {
    let c = tape.constant(&o.center);
    let diff = tape.sub(x, c);
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    let scaled = tape.scale(s, -1.0 / (o.s_safe * o.s_safe));
    let e = tape.exp(scaled);
    tape.scale(e, o.lambda)
}

// ── constructors ───────────────────────────────────────────────────

pub fn make_traffic_flow(grid: TimeGrid, sigma: f64, mu0: BaseDensity) -> Result<MfgProblem> {
    ProblemDescriptor::Traffic { grid, sigma, mu0 }.build()
}

pub fn make_crowd_motion(
    dim: usize,
    target: Vec<f64>,
    sigma: f64,
    grid: TimeGrid,
    mu0: BaseDensity,
) -> Result<MfgProblem> {
    if mu0.dim() != dim || target.len() != dim {
        return Err(Error::invalid("crowd dimensions disagree"));
    }
    ProblemDescriptor::Crowd {
        grid,
        sigma,
        mu0,
        target,
        active: dim,
        obstacle: None,
    }
    .build()
}

/// The two-dimensional crowd run with default geometry: start at (-2, 0)
/// with spread 0.5, target (2, 0).
pub fn crowd_2d_defaults(grid: TimeGrid, sigma: f64) -> Result<MfgProblem> {
    make_crowd_motion(
        2,
        vec![2.0, 0.0],
        sigma,
        grid,
        BaseDensity::Gaussian {
            mean: vec![-2.0, 0.0],
            std: vec![0.5, 0.5],
        },
    )
}

/// The 50-dimensional crowd run: start centered at (-2, -2, 0, ..., 0),
/// target (2, 2, 0, ..., 0), spread 0.5 per coordinate.
pub fn crowd_50d_defaults(grid: TimeGrid, sigma: f64) -> Result<MfgProblem> {
    let d = 50;
    let mut mean = vec![0.0; d];
    mean[0] = -2.0;
    mean[1] = -2.0;
    let mut target = vec![0.0; d];
    target[0] = 2.0;
    target[1] = 2.0;
    make_crowd_motion(
        d,
        target,
        sigma,
        grid,
        BaseDensity::Gaussian {
            mean,
            std: vec![0.5; d],
        },
    )
}

/// Crowd motion from (-4, 0) to (4, 0) around a bump at the origin with
/// safety radius 1.
pub fn make_crowd_obstacle(grid: TimeGrid, sigma: f64, lambda_obs: f64) -> Result<MfgProblem> {
    if !(lambda_obs > 0.0) {
        return Err(Error::invalid("lambda_obs must be positive"));
    }
    ProblemDescriptor::Crowd {
        grid,
        sigma,
        mu0: BaseDensity::Gaussian {
            mean: vec![-4.0, 0.0],
            std: vec![0.1, 0.1],
        },
        target: vec![4.0, 0.0],
        active: 2,
        obstacle: Some(Obstacle {
            center: vec![0.0, 0.0],
            lambda: lambda_obs,
            s_safe: 1.0,
        }),
    }
    .build()
}

/// Crowd dynamics whose terminal cost pins only the first coordinate
/// (to 4); the second coordinate is left to diffusion.
pub fn make_half_terminal(grid: TimeGrid, sigma: f64) -> Result<MfgProblem> {
    ProblemDescriptor::Crowd {
        grid,
        sigma,
        mu0: BaseDensity::Gaussian {
            mean: vec![-4.0, 0.0],
            std: vec![0.1, 0.1],
        },
        target: vec![4.0],
        active: 1,
        obstacle: None,
    }
    .build()
}

/// Max deviation between the closed-form control rule and a brute-force
/// per-coordinate grid search of alpha -> f + b . zeta.
pub fn check_control_rule(
    problem: &MfgProblem,
    x: &[f64],
    zeta: &[f64],
    mu: &MuView,
    half_width: f64,
    step: f64,
) -> f64 {
    let d = problem.dim();
    let mut closed = Vec::new();
    problem.optimal_control(x, zeta, mu, &mut closed);
    let mut worst = 0.0f64;
    let mut alpha = closed.clone();
    let cells = (2.0 * half_width / step).round() as usize;
    for k in 0..d {
        let mut best_v = f64::INFINITY;
        let mut best_a = 0.0;
        for i in 0..=cells {
            let a = -half_width + i as f64 * step;
            alpha[k] = a;
            let mut drift = Vec::new();
            problem.drift(x, &alpha, mu, &mut drift);
            let mut v = problem.running_cost(x, &alpha, mu);
            for j in 0..d {
                v += drift[j] * zeta[j];
            }
            if v < best_v {
                best_v = v;
                best_a = a;
            }
        }
        worst = worst.max((best_a - closed[k]).abs());
        alpha[k] = closed[k];
    }
    worst
}
