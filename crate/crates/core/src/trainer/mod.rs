//! Alternating trainer, configuration, and checkpoint persistence.

pub mod checkpoint;
pub mod config;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{converged, TrainConfig};
pub use train::{
    evaluation_batch, flow_step_clouds, resume, run, train, OuterRecord, Timings, TrainReport,
    TrainState,
};
