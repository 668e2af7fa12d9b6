pub mod metrics;
pub mod probe;
pub mod reference;
pub mod solve;
