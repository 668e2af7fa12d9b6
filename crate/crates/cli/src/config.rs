//! Run configuration schema. Unknown fields are rejected so typos surface
//! as config errors instead of silently falling back to defaults.

use serde::{Deserialize, Serialize};

use nfmkv_core::error::{Error, Result};
use nfmkv_core::flows::BaseDensity;
use nfmkv_core::problems::{
    crowd_2d_defaults, crowd_50d_defaults, make_crowd_motion, make_crowd_obstacle,
    make_half_terminal, make_traffic_flow, MfgProblem,
};
use nfmkv_core::sde::TimeGrid;
use nfmkv_core::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemTag {
    Traffic,
    Crowd2d,
    Crowd50d,
    Obstacle,
    HalfTerminal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemTag,
    /// Diffusion coefficient; per-problem default when omitted.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Time steps; per-problem default when omitted.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Initial density override (traffic only).
    #[serde(default)]
    pub mu0: Option<BaseDensity>,
    /// Target point override (crowd2d only).
    #[serde(default)]
    pub x_target: Option<Vec<f64>>,
    /// Obstacle weight (obstacle only).
    #[serde(default)]
    pub lambda_obs: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Trajectories written to trajectories.csv.
    pub trajectories: usize,
    /// Density mesh cells per axis for snapshot CSVs and the volumetric
    /// metric (d = 1 uses the ring default of 512 when 0).
    pub density_cells: usize,
    /// Samples per step for transport-distance metrics.
    pub metric_samples: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            trajectories: 500,
            density_cells: 0,
            metric_samples: 512,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            field: "config".into(),
            detail: e.to_string(),
        })?;
        config.train.validate()?;
        Ok(config)
    }

    pub fn problem_name(&self) -> &'static str {
        match self.problem {
            ProblemTag::Traffic => "traffic",
            ProblemTag::Crowd2d => "crowd2d",
            ProblemTag::Crowd50d => "crowd50d",
            ProblemTag::Obstacle => "obstacle",
            ProblemTag::HalfTerminal => "half_terminal",
        }
    }

    pub fn build_problem(&self) -> Result<MfgProblem> {
        let steps = self.steps.unwrap_or(match self.problem {
            ProblemTag::Traffic => 50,
            ProblemTag::Crowd2d => 100,
            ProblemTag::Crowd50d => 50,
            ProblemTag::Obstacle | ProblemTag::HalfTerminal => 20,
        });
        let sigma = self.sigma.unwrap_or(match self.problem {
            ProblemTag::Traffic => 0.35,
            _ => std::f64::consts::SQRT_2,
        });
        let grid = TimeGrid::new(self.horizon, steps)?;
        match self.problem {
            ProblemTag::Traffic => {
                let mu0 = self
                    .mu0
                    .clone()
                    .unwrap_or(BaseDensity::SinusoidRing { amp: 0.2, freq: 1 });
                make_traffic_flow(grid, sigma, mu0)
            }
            ProblemTag::Crowd2d => {
                if let Some(target) = &self.x_target {
                    if target.len() != 2 {
                        return Err(Error::invalid("crowd2d target needs two coordinates"));
                    }
                    make_crowd_motion(
                        2,
                        target.clone(),
                        sigma,
                        grid,
                        self.mu0.clone().unwrap_or(BaseDensity::Gaussian {
                            mean: vec![-2.0, 0.0],
                            std: vec![0.5, 0.5],
                        }),
                    )
                } else {
                    crowd_2d_defaults(grid, sigma)
                }
            }
            ProblemTag::Crowd50d => crowd_50d_defaults(grid, sigma),
            ProblemTag::Obstacle => {
                make_crowd_obstacle(grid, sigma, self.lambda_obs.unwrap_or(5.0))
            }
            ProblemTag::HalfTerminal => make_half_terminal(grid, sigma),
        }
    }

    /// Snapshot mesh resolution per axis.
    pub fn density_cells(&self, dim: usize) -> usize {
        if self.export.density_cells > 0 {
            self.export.density_cells
        } else if dim == 1 {
            512
        } else {
            200
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(r#"{ "problem": "traffic" }"#).unwrap();
        assert_eq!(c.problem, ProblemTag::Traffic);
        let p = c.build_problem().unwrap();
        assert_eq!(p.grid().steps, 50);
        assert_eq!(p.dim(), 1);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r = RunConfig::parse(r#"{ "problem": "traffic", "sigmma": 0.2 }"#);
        assert!(r.is_err());
        let r = RunConfig::parse(r#"{ "problem": "traffic", "train": { "bacth": 4 } }"#);
        assert!(r.is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse(
            r#"{ "problem": "crowd2d", "sigma": 0.9, "steps": 12,
                 "x_target": [1.0, 1.0], "train": { "seed": 7 } }"#,
        )
        .unwrap();
        let p = c.build_problem().unwrap();
        assert_eq!(p.grid().steps, 12);
        assert_eq!(p.sigma(), 0.9);
        assert_eq!(c.train.seed, 7);
    }
}
