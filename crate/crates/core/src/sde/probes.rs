//! Discretization-order probes: Euler-Maruyama strong/weak convergence
//! rates against exact solutions on shared Wiener paths, and the sampling
//! rate of the particle approximation of a distribution.

use crate::error::{Error, Result};
use crate::stream::{inverse_normal_cdf, StreamKey};

/// Scalar test equations with exact strong solutions.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticSde {
    /// dX = -theta X dt + sigma dW.
    OrnsteinUhlenbeck { theta: f64, sigma: f64, x0: f64 },
    /// dX = mu X dt + sigma X dW.
    GeometricBrownian { mu: f64, sigma: f64, x0: f64 },
}

impl AnalyticSde {
    fn drift(&self, x: f64) -> f64 {
        match self {
            AnalyticSde::OrnsteinUhlenbeck { theta, .. } => -theta * x,
            AnalyticSde::GeometricBrownian { mu, .. } => mu * x,
        }
    }

    fn diffusion(&self, x: f64) -> f64 {
        match self {
            AnalyticSde::OrnsteinUhlenbeck { sigma, .. } => *sigma,
            AnalyticSde::GeometricBrownian { sigma, .. } => sigma * x,
        }
    }

    fn x0(&self) -> f64 {
        match self {
            AnalyticSde::OrnsteinUhlenbeck { x0, .. } => *x0,
            AnalyticSde::GeometricBrownian { x0, .. } => *x0,
        }
    }

    /// Advance the exact solution by one fine step given that step's
    /// Wiener increment. GBM is pathwise exact; the OU stochastic
    /// convolution uses the midpoint weight, whose residual vanishes one
    /// order faster than the fine step itself.
    fn exact_step(&self, x: f64, dt: f64, dw: f64) -> f64 {
        match self {
            AnalyticSde::OrnsteinUhlenbeck { theta, sigma, .. } => {
                x * (-theta * dt).exp() + sigma * (-theta * dt / 2.0).exp() * dw
            }
            AnalyticSde::GeometricBrownian { mu, sigma, .. } => {
                x * ((mu - 0.5 * sigma * sigma) * dt + sigma * dw).exp()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOrders {
    pub strong_slope: f64,
    pub weak_slope: f64,
    /// (dt, error) pairs behind each fit.
    pub strong_errors: Vec<(f64, f64)>,
    pub weak_errors: Vec<(f64, f64)>,
}

/// Strong and weak convergence orders of Euler-Maruyama over a list of
/// step sizes on the unit horizon. Errors are measured against the exact
/// solution driven by the same Brownian paths, refined 8x beyond the
/// finest requested level; the weak statistic is E[f(X_T)] with f = x^2,
/// estimated on coupled paths so Monte-Carlo noise cancels.
pub fn em_order_probe(
    sde: &AnalyticSde,
    dt_list: &[f64],
    m: usize,
    seed: u64,
) -> Result<EmOrders> {
    if dt_list.len() < 3 {
        return Err(Error::invalid("em_order_probe needs at least 3 step sizes"));
    }
    let horizon = 1.0;
    let mut steps_list = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        if !(dt > 0.0 && dt <= horizon) {
            return Err(Error::invalid(format!("bad step size {dt}")));
        }
        let n = (horizon / dt).round() as usize;
        if ((horizon / n as f64) - dt).abs() > 1e-12 {
            return Err(Error::invalid(format!("step size {dt} does not divide the horizon")));
        }
        steps_list.push(n);
    }
    let fine_steps = steps_list.iter().max().unwrap() * 8;
    for &n in &steps_list {
        if fine_steps % n != 0 {
            return Err(Error::invalid("step sizes must share a common refinement"));
        }
    }
    let fine_dt = horizon / fine_steps as f64;
    let key = StreamKey::root(seed).tag("em-probe");

    let mut strong = vec![0.0f64; dt_list.len()];
    let mut weak_num = vec![0.0f64; dt_list.len()];
    let mut weak_true = vec![0.0f64; dt_list.len()];

    let mut fine = vec![0.0f64; fine_steps];
    let sqrt_fine = fine_dt.sqrt();
    for path in 0..m {
        let kp = key.child(path as u64);
        for (j, f) in fine.iter_mut().enumerate() {
            *f = sqrt_fine * kp.normal_at(j as u64);
        }
        // Exact path on the fine grid.
        let mut x_true_fine = Vec::with_capacity(fine_steps + 1);
        let mut xt = sde.x0();
        x_true_fine.push(xt);
        for &dw in &fine {
            xt = sde.exact_step(xt, fine_dt, dw);
            x_true_fine.push(xt);
        }
        for (level, &n_steps) in steps_list.iter().enumerate() {
            let stride = fine_steps / n_steps;
            let dt = horizon / n_steps as f64;
            let mut x = sde.x0();
            let mut sup = 0.0f64;
            for nstep in 0..n_steps {
                let dw: f64 = fine[nstep * stride..(nstep + 1) * stride].iter().sum();
                x = x + sde.drift(x) * dt + sde.diffusion(x) * dw;
                let xt = x_true_fine[(nstep + 1) * stride];
                sup = sup.max((x - xt).abs());
            }
            strong[level] += sup;
            weak_num[level] += x * x;
            weak_true[level] += x_true_fine[fine_steps] * x_true_fine[fine_steps];
        }
    }

    let mut strong_errors = Vec::new();
    let mut weak_errors = Vec::new();
    for level in 0..dt_list.len() {
        strong_errors.push((dt_list[level], strong[level] / m as f64));
        weak_errors.push((
            dt_list[level],
            ((weak_num[level] - weak_true[level]) / m as f64).abs(),
        ));
    }
    Ok(EmOrders {
        strong_slope: loglog_slope(&strong_errors),
        weak_slope: loglog_slope(&weak_errors),
        strong_errors,
        weak_errors,
    })
}

fn loglog_slope(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (lx, ly) = (x.ln(), y.max(1e-300).ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[derive(Debug, Clone)]
pub struct ParticleRate {
    pub slope: f64,
    /// (M, mean W1 over seeds).
    pub errors: Vec<(usize, f64)>,
}

/// W1 distance between the M-sample empirical measure of N(mean, std^2)
/// and the distribution itself, via the 1-D quantile formula, averaged
/// over seeds; returns the fitted log-log slope in M.
pub fn particle_rate_probe(
    mean: f64,
    std: f64,
    m_list: &[usize],
    n_seeds: usize,
    seed: u64,
) -> Result<ParticleRate> {
    if m_list.len() < 3 {
        return Err(Error::invalid("particle_rate_probe needs at least 3 sample counts"));
    }
    let key = StreamKey::root(seed).tag("particle-rate");
    let mut errors = Vec::with_capacity(m_list.len());
    for &m in m_list {
        if m == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let mut total = 0.0;
        for s in 0..n_seeds {
            let ks = key.child(s as u64).child(m as u64);
            let mut samples: Vec<f64> =
                (0..m).map(|i| mean + std * ks.normal_at(i as u64)).collect();
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            total += w1_empirical_vs_gaussian(&samples, mean, std);
        }
        errors.push((m, total / n_seeds as f64));
    }
    let pairs: Vec<(f64, f64)> = errors.iter().map(|&(m, e)| (m as f64, e)).collect();
    Ok(ParticleRate {
        slope: loglog_slope(&pairs),
        errors,
    })
}

/// Exact 1-D W1 between a sorted sample set and N(mean, std^2):
/// integral over quantiles of |x_(i) - F^{-1}(q)|, midpoint rule on
/// sub-cells of each order-statistic interval.
pub fn w1_empirical_vs_gaussian(sorted: &[f64], mean: f64, std: f64) -> f64 {
    let m = sorted.len();
    let sub = (2048 / m).clamp(1, 32);
    let mut total = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        for j in 0..sub {
            let q = (i as f64 + (j as f64 + 0.5) / sub as f64) / m as f64;
            let quant = mean + std * inverse_normal_cdf(q);
            total += (x - quant).abs();
        }
    }
    total / (m * sub) as f64
}
