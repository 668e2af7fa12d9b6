//! Base densities: samplable distributions with exact log-density, used as
//! the anchor of the flow (the problem's initial density).

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::stream::StreamKey;

const LN_2PI: f64 = 1.837_877_066_409_345_4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDensity {
    /// Diagonal Gaussian on R^d.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Uniform density on the unit ring [0, 1).
    UniformRing,
    /// Mixture of wrapped Gaussians on the unit ring.
    WrappedGaussianMixture { weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64> },
    /// 1 + amp * sin(2 pi freq x) on the unit ring; integrates to one exactly.
    SinusoidRing { amp: f64, freq: u32 },
}

impl BaseDensity {
    pub fn dim(&self) -> usize {
        match self {
            BaseDensity::Gaussian { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    pub fn is_ring(&self) -> bool {
        !matches!(self, BaseDensity::Gaussian { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseDensity::Gaussian { mean, std } => {
                if mean.len() != std.len() || mean.is_empty() {
                    return Err(Error::invalid("gaussian mean/std length mismatch"));
                }
                if std.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::invalid("gaussian std must be positive"));
                }
            }
            BaseDensity::UniformRing => {}
            BaseDensity::WrappedGaussianMixture { weights, means, stds } => {
                if weights.len() != means.len() || weights.len() != stds.len() || weights.is_empty()
                {
                    return Err(Error::invalid("mixture component length mismatch"));
                }
                if weights.iter().any(|&w| !(w > 0.0)) || stds.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::invalid("mixture weights and stds must be positive"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
            BaseDensity::SinusoidRing { amp, freq } => {
                if amp.abs() >= 1.0 {
                    return Err(Error::invalid("sinusoid amplitude must satisfy |amp| < 1"));
                }
                if *freq == 0 {
                    return Err(Error::invalid("sinusoid frequency must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            BaseDensity::Gaussian { mean, std } => {
                let mut acc = 0.0;
                for i in 0..mean.len() {
                    let z = (x[i] - mean[i]) / std[i];
                    acc += -0.5 * z * z - std[i].ln();
                }
                acc - 0.5 * mean.len() as f64 * LN_2PI
            }
            BaseDensity::UniformRing => 0.0,
            BaseDensity::WrappedGaussianMixture { weights, means, stds } => {
                let mut total = 0.0;
                for c in 0..weights.len() {
                    let (w, m, s) = (weights[c], means[c], stds[c]);
                    let kmax = wrap_count(s);
                    for k in -kmax..=kmax {
                        let z = (x[0] - m + k as f64) / s;
                        total += w * (-0.5 * z * z).exp() / (s * (LN_2PI).exp().sqrt());
                    }
                }
                total.ln()
            }
            BaseDensity::SinusoidRing { amp, freq } => {
                (1.0 + amp * (2.0 * std::f64::consts::PI * *freq as f64 * x[0]).sin()).ln()
            }
        }
    }

    /// Log-density recorded on the tape (parameters of the base are fixed;
    /// only the position may carry gradient).
    pub fn log_density_tape(&self, tape: &mut Tape, x: Var) -> Var {
        match self {
            BaseDensity::Gaussian { mean, std } => {
                let m = tape.constant(mean);
                let s = tape.constant(std);
                let centered = tape.sub(x, m);
                let z = tape.div(centered, s);
                let sq = tape.square(z);
                let ssum = tape.sum(sq);
                let half = tape.scale(ssum, -0.5);
                let log_norm: f64 =
                    -std.iter().map(|s| s.ln()).sum::<f64>() - 0.5 * mean.len() as f64 * LN_2PI;
                tape.add_const(half, log_norm)
            }
            BaseDensity::UniformRing => {
                let zero = tape.scale(x, 0.0);
                tape.sum(zero)
            }
            BaseDensity::WrappedGaussianMixture { weights, means, stds } => {
                let mut terms = Vec::new();
                for c in 0..weights.len() {
                    let (w, m, s) = (weights[c], means[c], stds[c]);
                    let coef = w / (s * (LN_2PI).exp().sqrt());
                    let kmax = wrap_count(s);
                    for k in -kmax..=kmax {
                        let sh = tape.add_const(x, k as f64 - m);
                        let z = tape.scale(sh, 1.0 / s);
                        let sq = tape.square(z);
                        let e = tape.scale(sq, -0.5);
                        let ex = tape.exp(e);
                        terms.push(tape.scale(ex, coef));
                    }
                }
                let all = tape.concat(&terms);
                let total = tape.sum(all);
                tape.ln(total)
            }
            BaseDensity::SinusoidRing { amp, freq } => {
                let arg = tape.scale(x, 2.0 * std::f64::consts::PI * *freq as f64);
                let s = tape.sin(arg);
                let a = tape.scale(s, *amp);
                let p = tape.add_const(a, 1.0);
                tape.ln(p)
            }
        }
    }

    /// Deterministic sample `index` from the stream; writes `dim()` values.
    pub fn sample_into(&self, key: StreamKey, index: u64, out: &mut [f64]) {
        match self {
            BaseDensity::Gaussian { mean, std } => {
                let d = mean.len() as u64;
                for i in 0..mean.len() {
                    out[i] = mean[i] + std[i] * key.normal_at(index * d + i as u64);
                }
            }
            BaseDensity::UniformRing => {
                out[0] = key.uniform_at(index);
            }
            BaseDensity::WrappedGaussianMixture { weights, means, stds } => {
                let u = key.uniform_at(2 * index);
                let mut c = 0;
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    c = i;
                    if u < acc {
                        break;
                    }
                }
                let z = key.normal_at(2 * index + 1);
                let x = means[c] + stds[c] * z;
                out[0] = x - x.floor();
            }
            BaseDensity::SinusoidRing { amp, freq } => {
                let u = key.uniform_at(index);
                out[0] = invert_sinusoid_cdf(*amp, *freq, u);
            }
        }
    }
}

fn wrap_count(std: f64) -> i32 {
    ((4.0 * std).ceil() as i32 + 1).min(8)
}

/// CDF of 1 + a sin(2 pi f x) is x + a (1 - cos(2 pi f x)) / (2 pi f);
/// strictly increasing for |a| < 1, inverted by guarded Newton.
fn invert_sinusoid_cdf(amp: f64, freq: u32, u: f64) -> f64 {
    let tp = 2.0 * std::f64::consts::PI * freq as f64;
    let cdf = |x: f64| x + amp * (1.0 - (tp * x).cos()) / tp;
    let pdf = |x: f64| 1.0 + amp * (tp * x).sin();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = u;
    for _ in 0..80 {
        let f = cdf(x) - u;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = f / pdf(x);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamStore;

    fn quad_ring(f: impl Fn(f64) -> f64, cells: usize) -> f64 {
        (0..cells).map(|j| f(j as f64 / cells as f64)).sum::<f64>() / cells as f64
    }

    #[test]
    fn ring_densities_integrate_to_one() {
        let densities = vec![
            BaseDensity::UniformRing,
            BaseDensity::SinusoidRing { amp: 0.5, freq: 1 },
            BaseDensity::SinusoidRing { amp: 0.3, freq: 2 },
            BaseDensity::WrappedGaussianMixture {
                weights: vec![0.6, 0.4],
                means: vec![0.25, 0.7],
                stds: vec![0.1, 0.2],
            },
        ];
        for b in densities {
            b.validate().unwrap();
            let integral = quad_ring(|x| b.log_density(&[x]).exp(), 4096);
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "{b:?} integrates to {integral}"
            );
        }
    }

    #[test]
    fn gaussian_2d_integrates_to_one() {
        let b = BaseDensity::Gaussian {
            mean: vec![0.5, -1.0],
            std: vec![0.8, 1.3],
        };
        let n = 400;
        let (lo, hi) = (-9.0, 9.0);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = [lo + i as f64 * h + 0.5, lo + j as f64 * h - 1.0];
                let w = if i == 0 || i == n { 0.5 } else { 1.0 }
                    * if j == 0 || j == n { 0.5 } else { 1.0 };
                total += w * b.log_density(&x).exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn samplers_match_density_moments() {
        let key = StreamKey::root(5).tag("base-sample");
        let m = 40_000;

        // Gaussian: sample mean/std vs parameters.
        let b = BaseDensity::Gaussian {
            mean: vec![1.5, -0.5],
            std: vec![0.7, 1.1],
        };
        let mut buf = [0.0; 2];
        let (mut s1, mut s2) = ([0.0; 2], [0.0; 2]);
        for i in 0..m {
            b.sample_into(key, i, &mut buf);
            for k in 0..2 {
                s1[k] += buf[k];
                s2[k] += buf[k] * buf[k];
            }
        }
        for k in 0..2 {
            let mean = s1[k] / m as f64;
            let var = s2[k] / m as f64 - mean * mean;
            let want_mean = [1.5, -0.5][k];
            let want_sd = [0.7, 1.1][k];
            assert!((mean - want_mean).abs() < 4.0 * want_sd / (m as f64).sqrt() * 1.5);
            assert!((var.sqrt() - want_sd).abs() < 0.02, "sd {}", var.sqrt());
        }

        // Ring mixture: compare histogram with the density.
        let b = BaseDensity::WrappedGaussianMixture {
            weights: vec![1.0],
            means: vec![0.3],
            stds: vec![0.15],
        };
        let bins = 32;
        let mut hist = vec![0.0; bins];
        let mut x = [0.0];
        for i in 0..m {
            b.sample_into(key.child(1), i, &mut x);
            assert!((0.0..1.0).contains(&x[0]));
            hist[(x[0] * bins as f64) as usize] += 1.0;
        }
        for j in 0..bins {
            let center = (j as f64 + 0.5) / bins as f64;
            let want = b.log_density(&[center]).exp() / bins as f64;
            let got = hist[j] / m as f64;
            let se = (want * (1.0 - want) / m as f64).sqrt().max(1e-6);
            assert!(
                (got - want).abs() < 5.0 * se + 1e-3,
                "bin {j}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn sinusoid_sampler_matches_cdf() {
        let b = BaseDensity::SinusoidRing { amp: 0.5, freq: 1 };
        let key = StreamKey::root(77);
        let m = 20_000;
        let mut x = [0.0];
        let mut below_half = 0;
        for i in 0..m {
            b.sample_into(key, i, &mut x);
            if x[0] < 0.5 {
                below_half += 1;
            }
        }
        // CDF(0.5) = 0.5 + a/pi.
        let want = 0.5 + 0.5 / std::f64::consts::PI;
        let got = below_half as f64 / m as f64;
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
    }

    #[test]
    fn tape_log_density_matches_raw() {
        let store = ParamStore::new();
        let cases = vec![
            (BaseDensity::Gaussian { mean: vec![0.0], std: vec![1.0] }, vec![0.0]),
            (BaseDensity::SinusoidRing { amp: 0.4, freq: 1 }, vec![0.3]),
            (
                BaseDensity::WrappedGaussianMixture {
                    weights: vec![0.5, 0.5],
                    means: vec![0.2, 0.8],
                    stds: vec![0.1, 0.12],
                },
                vec![0.55],
            ),
        ];
        for (b, x) in cases {
            let raw = b.log_density(&x);
            let mut t = Tape::new(&store);
            let xv = t.constant(&x);
            let lp = b.log_density_tape(&mut t, xv);
            let got = t.scalar_value(lp);
            assert!((got - raw).abs() < 1e-12, "{b:?}: {got} vs {raw}");
        }
    }

    #[test]
    fn standard_normal_log_density_at_zero() {
        let b = BaseDensity::Gaussian { mean: vec![0.0], std: vec![1.0] };
        assert!((b.log_density(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-12);
    }
}
