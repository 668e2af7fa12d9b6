//! Wiener increment batches from counter-based streams.

use crate::error::{Error, Result};
use crate::stream::StreamKey;

use super::grid::TimeGrid;

/// Increments dW[m][n] with each coordinate ~ Normal(0, dt), materialized
/// flat as (m, n, k). Addressed by (key, m, n, k), so any sub-batch is
/// independent of evaluation order.
#[derive(Debug, Clone)]
pub struct WienerBatch {
    pub m: usize,
    pub steps: usize,
    pub dim: usize,
    pub dt: f64,
    /// Raw stream key the batch was generated from.
    pub provenance: u64,
    inc: Vec<f64>,
}

pub fn gen_wiener(grid: &TimeGrid, m: usize, dim: usize, key: StreamKey) -> Result<WienerBatch> {
    if m == 0 || dim == 0 {
        return Err(Error::invalid("wiener batch needs m >= 1 and dim >= 1"));
    }
    let dt = grid.dt();
    let scale = dt.sqrt();
    let mut inc = Vec::with_capacity(m * grid.steps * dim);
    for i in 0..m {
        let ki = key.child(i as u64);
        for n in 0..grid.steps {
            let kn = ki.child(n as u64);
            for k in 0..dim {
                inc.push(scale * kn.normal_at(k as u64));
            }
        }
    }
    Ok(WienerBatch {
        m,
        steps: grid.steps,
        dim,
        dt,
        provenance: key.raw(),
        inc,
    })
}

impl WienerBatch {
    #[inline]
    pub fn increment(&self, m: usize, n: usize) -> &[f64] {
        let base = (m * self.steps + n) * self.dim;
        &self.inc[base..base + self.dim]
    }
}
