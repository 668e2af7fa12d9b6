//! Frozen per-step views of the population measure.
//!
//! Coefficient functions consume the distribution as (samples, density
//! callback) pairs, which is exactly what a flow can provide. During a
//! value phase the flow is frozen, so the snapshot is taken once: sample
//! clouds per step, plus (for ring problems) the per-step density tabled on
//! a fine grid behind a C1 interpolant cheap enough to sit inside the
//! simulation tape.

use std::sync::Arc;

use crate::diffcore::{ParamStore, RingTable};
use crate::error::Result;
use crate::flows::TimeIndexedFlow;
use crate::stream::StreamKey;

#[derive(Debug, Clone)]
pub struct MuSnapshot {
    pub dim: usize,
    /// Per-step sample clouds, flat (M', dim); length steps + 1.
    pub samples: Vec<Arc<[f64]>>,
    /// Per-step density tables for ring problems; length steps + 1.
    pub ring_density: Option<Vec<Arc<RingTable>>>,
}

/// Borrowed single-step view.
#[derive(Clone, Copy)]
pub struct MuView<'a> {
    pub dim: usize,
    pub samples: &'a Arc<[f64]>,
    pub ring_density: Option<&'a Arc<RingTable>>,
}

impl MuSnapshot {
    pub fn from_flow(
        flow: &TimeIndexedFlow,
        store: &ParamStore,
        m_samples: usize,
        table_cells: usize,
        key: StreamKey,
    ) -> Result<Self> {
        let clouds = flow.sample_paths(store, m_samples, key)?;
        let samples: Vec<Arc<[f64]>> = clouds.into_iter().map(|c| c.into()).collect();
        let ring_density = if flow.is_ring() {
            let mut tables = Vec::with_capacity(flow.steps() + 1);
            for n in 0..=flow.steps() {
                let mut vals = Vec::with_capacity(table_cells);
                for j in 0..table_cells {
                    let x = j as f64 / table_cells as f64;
                    vals.push(flow.logprob_at_step(store, n, &[x])?.exp());
                }
                tables.push(Arc::new(RingTable::new(vals)));
            }
            Some(tables)
        } else {
            None
        };
        Ok(MuSnapshot {
            dim: flow.dim(),
            samples,
            ring_density,
        })
    }

    /// Build directly from per-step data (tests, reference comparisons).
    pub fn from_parts(
        dim: usize,
        samples: Vec<Arc<[f64]>>,
        ring_density: Option<Vec<Arc<RingTable>>>,
    ) -> Self {
        MuSnapshot {
            dim,
            samples,
            ring_density,
        }
    }

    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn view(&self, n: usize) -> MuView<'_> {
        MuView {
            dim: self.dim,
            samples: &self.samples[n],
            ring_density: self.ring_density.as_ref().map(|t| &t[n]),
        }
    }
}

impl<'a> MuView<'a> {
    /// Density value at a point (ring problems only).
    pub fn density(&self, x: f64) -> f64 {
        self.ring_density
            .expect("density lookup on a problem without tables")
            .eval(x)
            .0
    }
}
