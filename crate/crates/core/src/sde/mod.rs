//! Forward-backward SDE machinery: time grids, Wiener batches, the coupled
//! forward simulation / value rollout, terminal-matching loss, and the
//! discretization-order probes.

pub mod grid;
pub mod probes;
pub mod simulate;
pub mod value_nets;
pub mod wiener;

pub use grid::TimeGrid;
pub use probes::{em_order_probe, particle_rate_probe, AnalyticSde, EmOrders, ParticleRate};
pub use simulate::{
    build_path, mkv_loss, mkv_sample_loss, rollout_value, simulate_forward, PathVars, SimContext,
    TrajectoryBatch, DIVERGENCE_GUARD,
};
pub use value_nets::ValueNets;
pub use wiener::{gen_wiener, WienerBatch};
