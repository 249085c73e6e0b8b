//! Thin dispatch layer over rayon. With the `parallel` feature disabled every
//! helper runs sequentially with identical results.
//!
//! Reductions never use a parallel float sum: work is split into fixed chunks,
//! partial results are collected in order and folded sequentially, so output is
//! bitwise independent of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for reductions over field samples.
pub const REDUCE_CHUNK: usize = 1 << 14;

/// Applies `f(chunk_index, chunk)` to consecutive mutable chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `0..n` and returns the results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Deterministic chunked sum of `f(i)` for `i in 0..n`.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map_range(chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    });
    partial.into_iter().sum()
}

/// Applies `f(chunk_index, chunk)` to consecutive mutable chunks of `data`
/// and adds the returned values in chunk order.
pub fn sum_chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F) -> f64
where
    T: Send,
    F: Fn(usize, &mut [T]) -> f64 + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    let partial: Vec<f64> = data
        .par_chunks_mut(chunk)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partial: Vec<f64> = data
        .chunks_mut(chunk)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect();
    partial.into_iter().sum()
}

/// Deterministic chunked maximum of `f(i)`; returns `f64::NEG_INFINITY` for `n == 0`.
pub fn max_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    map_range(chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).map(&f).fold(f64::NEG_INFINITY, f64::max)
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max)
}
