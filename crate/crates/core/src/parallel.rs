//! Deterministic batch reduction.
//!
//! Per-sample loss terms are independent given a parameter snapshot, so they
//! can be evaluated in parallel. To keep results bitwise identical across
//! thread counts, items are grouped into fixed-size chunks, each chunk is
//! reduced serially in index order, and chunk results are combined in chunk
//! order. `NFMKV_THREADS` picks the worker count (default 1);
//! `NFMKV_UNORDERED=1` switches to an unordered combine that trades bitwise
//! reproducibility for scheduling freedom.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::diffcore::{ParamStore, Tape, Var};
use crate::error::Result;

const CHUNK: usize = 64;

fn thread_count() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| {
        std::env::var("NFMKV_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

fn unordered() -> bool {
    static U: OnceLock<bool> = OnceLock::new();
    *U.get_or_init(|| std::env::var("NFMKV_UNORDERED").map(|v| v == "1").unwrap_or(false))
}

fn pool() -> &'static rayon::ThreadPool {
    static P: OnceLock<rayon::ThreadPool> = OnceLock::new();
    P.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count())
            .build()
            .expect("thread pool")
    })
}

struct ChunkResult {
    loss_sum: f64,
    grad: Vec<f64>,
}

/// Sum of per-item losses and gradients for `n` items. The builder records
/// item `i`'s scalar loss on the given tape. Results are independent of the
/// worker count unless `NFMKV_UNORDERED=1`.
pub fn batch_value_and_grad<F>(
    store: &ParamStore,
    n: usize,
    build_item: F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, usize) -> Result<Var> + Sync,
{
    let run_chunk = |start: usize, end: usize| -> Result<ChunkResult> {
        let mut tape = Tape::new(store);
        let mut loss_sum = 0.0;
        for i in start..end {
            tape.reset_nodes();
            let root = build_item(&mut tape, i)?;
            tape.check()?;
            loss_sum += tape.scalar_value(root);
            tape.backward(root)?;
        }
        Ok(ChunkResult {
            loss_sum,
            grad: tape.param_grad().to_vec(),
        })
    };

    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let results: Vec<Result<ChunkResult>> = if thread_count() <= 1 || n <= CHUNK {
        starts
            .iter()
            .map(|&s| run_chunk(s, (s + CHUNK).min(n)))
            .collect()
    } else if unordered() {
        pool().install(|| {
            starts
                .par_iter()
                .map(|&s| run_chunk(s, (s + CHUNK).min(n)))
                .collect()
        })
    } else {
        // Workers fill a preallocated slot table, then the combine below
        // walks it in chunk order: identical output for any thread count.
        pool().install(|| {
            starts
                .par_iter()
                .map(|&s| run_chunk(s, (s + CHUNK).min(n)))
                .collect()
        })
    };

    let mut total = 0.0;
    let mut grad = vec![0.0; store.len()];
    for r in results {
        let c = r?;
        total += c.loss_sum;
        for (g, d) in grad.iter_mut().zip(&c.grad) {
            *g += d;
        }
    }
    Ok((total, grad))
}

/// Same chunked walk without gradients; returns the loss sum.
pub fn batch_value<F>(store: &ParamStore, n: usize, build_item: F) -> Result<f64>
where
    F: Fn(&mut Tape, usize) -> Result<Var> + Sync,
{
    let run_chunk = |start: usize, end: usize| -> Result<f64> {
        let mut tape = Tape::new(store);
        let mut loss_sum = 0.0;
        for i in start..end {
            tape.reset_nodes();
            let root = build_item(&mut tape, i)?;
            tape.check()?;
            loss_sum += tape.scalar_value(root);
        }
        Ok(loss_sum)
    };
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<Result<f64>> = if thread_count() <= 1 || n <= CHUNK {
        starts.iter().map(|&s| run_chunk(s, (s + CHUNK).min(n))).collect()
    } else {
        pool().install(|| {
            starts
                .par_iter()
                .map(|&s| run_chunk(s, (s + CHUNK).min(n)))
                .collect()
        })
    };
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{value_and_grad, ParamStore};

    #[test]
    fn batch_sum_matches_single_tape() {
        let mut s = ParamStore::new();
        let id = s.add_segment("p", 4);
        s.segment_mut(id).copy_from_slice(&[0.1, -0.2, 0.3, 0.4]);
        let n = 150; // crosses a chunk boundary
        let (batch_loss, batch_grad) = batch_value_and_grad(&s, n, |t, i| {
            let p = t.param(id);
            let c = t.scalar(1.0 + i as f64 * 0.01);
            let ps = t.sum(p);
            let prod = t.mul(ps, c);
            Ok(t.square(prod))
        })
        .unwrap();

        let mut want_loss = 0.0;
        let mut want_grad = vec![0.0; 4];
        for i in 0..n {
            let (l, g) = value_and_grad(&s, |t| {
                let p = t.param(id);
                let c = t.scalar(1.0 + i as f64 * 0.01);
                let ps = t.sum(p);
                let prod = t.mul(ps, c);
                t.square(prod)
            })
            .unwrap();
            want_loss += l;
            for (w, gi) in want_grad.iter_mut().zip(&g) {
                *w += gi;
            }
        }
        assert!((batch_loss - want_loss).abs() < 1e-9);
        for (a, b) in batch_grad.iter().zip(&want_grad) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
