//! Path-parallel helpers.
//!
//! Every helper returns results in path order and every reduction is summed
//! over fixed-size chunks in a fixed order, so results do not depend on the
//! number of workers. Without the `parallel` feature the same code runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Paths per reduction chunk. Fixed so that partial sums are identical for any
/// worker count.
pub const CHUNK: usize = 2048;

/// Evaluates `f` for every path index and collects the results in order.
pub fn map_paths<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fills `out` row by row; row `p` has `width` entries.
pub fn fill_rows<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(p, row)| f(p, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(width)
            .enumerate()
            .for_each(|(p, row)| f(p, row));
    }
}

/// Sums `f(p)` (a vector of length `dim`) over all paths deterministically.
pub fn sum_vec<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    sum_vec_scratch(n, dim, 0, |p, _, acc| f(p, acc))
}

/// Like [`sum_vec`], with a per-chunk scratch buffer of `scratch_len` zeros
/// handed to `f(p, scratch, acc)`.
pub fn sum_vec_scratch<F>(n: usize, dim: usize, scratch_len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| {
        let mut acc = vec![0.0; dim];
        let mut scratch = vec![0.0; scratch_len];
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        for p in lo..hi {
            f(p, &mut scratch, &mut acc);
        }
        acc
    };
    let parts: Vec<Vec<f64>> = map_paths(n_chunks, partial);
    let mut total = vec![0.0; dim];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Sums a scalar function over paths deterministically.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum_vec(n, 1, |p, acc| acc[0] += f(p))[0]
}

/// Sample mean of a scalar function over paths.
pub fn mean<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n == 0 {
        return 0.0;
    }
    sum(n, f) / n as f64
}
