//! Execution-mode plumbing for the data-parallel inner loops.
//!
//! Every batch operation in the crate (network evaluation over particle
//! rows, Sinkhorn row updates, pairwise certification) is written against a
//! fixed row-chunk decomposition. Each chunk is computed independently and
//! the per-chunk results are combined in chunk order, so the numerical
//! output is identical whether the chunks run on the current thread or on a
//! rayon pool. `Exec` only selects the driver.

use ndarray::{ArrayView2, Axis};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per work unit. Fixed so that results do not depend on thread count.
pub const ROW_CHUNK: usize = 256;

/// How to drive the chunked loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    /// Chunks processed in a plain loop on the calling thread.
    Seq,
    /// Chunks processed on the rayon pool (falls back to `Seq` when the
    /// `parallel` feature is disabled).
    #[default]
    Par,
}

impl Exec {
    /// Sequential when a run asks for deterministic single-threaded mode.
    pub fn from_deterministic(deterministic: bool) -> Self {
        if deterministic {
            Exec::Seq
        } else {
            Exec::Par
        }
    }
}

/// Apply `f` to consecutive row chunks of `x`, collecting results in chunk
/// order. `f` receives the starting row index of its chunk.
pub fn map_row_chunks<R, F>(x: ArrayView2<'_, f64>, exec: Exec, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, ArrayView2<'_, f64>) -> R + Sync,
{
    let chunks: Vec<(usize, ArrayView2<'_, f64>)> = x
        .axis_chunks_iter(Axis(0), ROW_CHUNK)
        .enumerate()
        .map(|(i, c)| (i * ROW_CHUNK, c))
        .collect();

    #[cfg(feature = "parallel")]
    if exec == Exec::Par {
        return chunks.par_iter().map(|(start, c)| f(*start, c.reborrow())).collect();
    }
    let _ = exec;
    chunks.iter().map(|(start, c)| f(*start, c.reborrow())).collect()
}

/// Apply `f` to every index in `0..n`, collecting results in index order.
pub fn map_indices<R, F>(n: usize, exec: Exec, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Par {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fill the rows of a contiguous row-major buffer in parallel.
/// `f(i, row)` writes row `i`.
pub fn fill_rows<F>(buf: &mut [f64], ncols: usize, exec: Exec, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    debug_assert_eq!(buf.len() % ncols.max(1), 0);

    #[cfg(feature = "parallel")]
    if exec == Exec::Par {
        buf.par_chunks_mut(ncols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = exec;
    for (i, row) in buf.chunks_mut(ncols).enumerate() {
        f(i, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn chunked_results_are_mode_independent() {
        let x = Array2::from_shape_fn((1000, 3), |(i, j)| (i * 7 + j) as f64 * 0.01);
        let seq: Vec<f64> = map_row_chunks(x.view(), Exec::Seq, |_, c| c.sum());
        let par: Vec<f64> = map_row_chunks(x.view(), Exec::Par, |_, c| c.sum());
        assert_eq!(seq, par);
        assert_eq!(seq.len(), 4); // 1000 rows / 256
    }

    #[test]
    fn map_indices_preserves_order() {
        let out = map_indices(100, Exec::Par, |i| i * i);
        assert_eq!(out[7], 49);
        assert_eq!(out.len(), 100);
    }
}
