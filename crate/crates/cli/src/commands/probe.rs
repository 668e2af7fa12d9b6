//! The `probe` command: discretization-order and gradient-fidelity checks
//! with pass/fail exit codes.

use nfmkv_core::error::{Error, Result};
use nfmkv_core::flows::roundtrip_audit;
use nfmkv_core::gradcheck::grad_fidelity_check;
use nfmkv_core::sde::{em_order_probe, particle_rate_probe, AnalyticSde};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    EmStrong,
    EmWeak,
    ParticleRate,
    GradCheck,
    FlowRoundtrip,
}

impl std::str::FromStr for ProbeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "em-strong" => Ok(ProbeKind::EmStrong),
            "em-weak" => Ok(ProbeKind::EmWeak),
            "particle-rate" => Ok(ProbeKind::ParticleRate),
            "grad-check" => Ok(ProbeKind::GradCheck),
            "flow-roundtrip" => Ok(ProbeKind::FlowRoundtrip),
            other => Err(format!(
                "unknown probe `{other}` (em-strong | em-weak | particle-rate | grad-check | flow-roundtrip)"
            )),
        }
    }
}

fn fail(msg: String) -> Error {
    Error::numeric("probe", msg)
}

pub fn run_probe(kind: ProbeKind, seed: u64) -> Result<()> {
    match kind {
        ProbeKind::EmStrong | ProbeKind::EmWeak => {
            let sde = AnalyticSde::OrnsteinUhlenbeck { theta: 1.0, sigma: 0.5, x0: 1.0 };
            let dts: Vec<f64> = (4..=9).map(|k| 0.5f64.powi(k)).collect();
            let orders = em_order_probe(&sde, &dts, 10_000, seed)?;
            println!(
                "euler-maruyama orders: strong {:.4}, weak {:.4}",
                orders.strong_slope, orders.weak_slope
            );
            for (dt, e) in &orders.strong_errors {
                println!("  dt {dt:.6}: strong {e:.6e}");
            }
            if kind == ProbeKind::EmStrong {
                if !(0.4..=0.6).contains(&orders.strong_slope) {
                    return Err(fail(format!(
                        "strong slope {:.4} outside [0.4, 0.6]",
                        orders.strong_slope
                    )));
                }
            } else if !(0.8..=1.2).contains(&orders.weak_slope) {
                return Err(fail(format!(
                    "weak slope {:.4} outside [0.8, 1.2]",
                    orders.weak_slope
                )));
            }
        }
        ProbeKind::ParticleRate => {
            let rate = particle_rate_probe(0.0, 1.0, &[100, 1000, 10_000], 20, seed)?;
            println!("particle rate slope {:.4}", rate.slope);
            for (m, e) in &rate.errors {
                println!("  M {m}: W1 {e:.6e}");
            }
            if !(-0.6..=-0.4).contains(&rate.slope) {
                return Err(fail(format!("slope {:.4} outside [-0.6, -0.4]", rate.slope)));
            }
        }
        ProbeKind::GradCheck => {
            let r = grad_fidelity_check(seed, 1e-5)?;
            println!(
                "fd-check relative errors: terminal-match {:.3e}, likelihood {:.3e}, terminal-cost {:.3e}",
                r.mkv, r.dis, r.terminal
            );
            if r.max() >= 1e-4 {
                return Err(fail(format!("max fd error {:.3e} >= 1e-4", r.max())));
            }
        }
        ProbeKind::FlowRoundtrip => {
            let audit = roundtrip_audit(seed, 1000)?;
            for k in &audit.kinds {
                println!(
                    "{:<16} round-trip {:.3e}, log-det asymmetry {:.3e}",
                    k.kind, k.max_round_trip, k.max_logdet_asymmetry
                );
            }
            if audit.worst_round_trip() >= 1e-6 {
                return Err(fail(format!(
                    "round-trip error {:.3e} >= 1e-6",
                    audit.worst_round_trip()
                )));
            }
            if audit.worst_asymmetry() >= 1e-8 {
                return Err(fail(format!(
                    "log-det asymmetry {:.3e} >= 1e-8",
                    audit.worst_asymmetry()
                )));
            }
        }
    }
    Ok(())
}
