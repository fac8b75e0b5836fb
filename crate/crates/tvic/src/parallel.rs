//! Internal execution helpers. With the `parallel` feature the maps run on
//! rayon; without it they run the same chunked loops sequentially. Reductions
//! always combine fixed-size chunk sums in index order, so both builds (and
//! repeated runs of the parallel build) produce bit-identical floats.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic reductions and parallel maps.
pub(crate) const CHUNK: usize = 4096;

/// Writes `f(i)` into every element of `out`.
pub(crate) fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + k);
            }
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + k);
            }
        });
    }
}

/// Deterministic sum: per-chunk sequential sums combined in chunk order.
pub(crate) fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partials = chunk_sums(n, f);
    partials.iter().sum()
}

fn chunk_sums<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut s = 0.0;
                for i in lo..hi {
                    s += f(i);
                }
                s
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks)
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut s = 0.0;
                for i in lo..hi {
                    s += f(i);
                }
                s
            })
            .collect()
    }
}

/// Deterministic max over `f(i)`; returns `f64::NEG_INFINITY` on empty input.
pub(crate) fn max<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let per_chunk = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut m = f64::NEG_INFINITY;
        for i in lo..hi {
            m = m.max(f(i));
        }
        m
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..n_chunks).into_par_iter().map(per_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..n_chunks).map(per_chunk).collect();
    partials.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Runs `f` on every index of an embarrassingly parallel task list, collecting
/// results in input order.
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
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
