//! Normalizing-flow density path: base densities, invertible blocks, and
//! the time-indexed composition with its training losses.

pub mod audit;
pub mod base;
pub mod block;
pub mod flow;

pub use audit::{roundtrip_audit, KindAudit, RoundtripAudit};
pub use base::BaseDensity;
pub use block::{FlowBlock, MafBlock, SplineBlock};
pub use flow::TimeIndexedFlow;
