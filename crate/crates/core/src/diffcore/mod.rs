//! Differentiable-numerics substrate: parameter storage, a reverse-mode
//! tape over vector primitives, dense networks, and Adam.

pub mod adam;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{AdamParams, AdamState};
pub use mlp::{Activation, Mlp, MlpScratch, MlpSpec};
pub use params::{ParamStore, Segment, SegmentId};
pub use tape::{fd_check, grad, loss_value, value_and_grad, RingTable, Tape, Var};
