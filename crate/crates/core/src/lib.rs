//! Mean-field game equilibria via a coupled pair of models: a time-indexed
//! normalizing flow carries the population density path, and chained
//! feedforward networks carry the value process of the associated
//! forward-backward SDE. The two are trained alternately until the coupled
//! fixed point is reached. A finite-difference reference solver and an
//! evaluation-metric battery round out the crate.

pub mod diffcore;
pub mod error;
pub mod flows;
pub mod gradcheck;
pub mod metrics;
pub mod parallel;
pub mod problems;
pub mod reference;
pub mod trainer;
pub mod sde;
pub mod stream;

pub use error::{Error, Result};
