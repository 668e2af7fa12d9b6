//! Evaluation metrics: volumetric density checks, transport distances
//! between consecutive marginals, realized control cost, and reporting.

pub mod evaluate;
pub mod report;
pub mod wasserstein;

pub use evaluate::{
    consecutive_wdist, density_integral, projected_density_2d, realized_cost, ConsecutiveWdist,
    DensityIntegral, ProjectedDensity,
};
pub use report::{MetricsReport, RunMetrics};
pub use wasserstein::{assignment_cost, wasserstein, MAX_EXACT_POINTS};
