//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon unless the
//! runtime switch [`set_parallel`] turned parallelism off. Every reduction
//! runs over fixed-size chunks whose partial results are combined in index
//! order, so results are bit-identical for any worker count.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items per reduction chunk. Fixed so that floating point sums do
/// not depend on how the work is split between threads.
pub const CHUNK: usize = 4096;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable the parallel code paths at runtime.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

/// Whether the parallel code paths are active.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// `out[i] = f(i)` for every index.
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + k);
            }
        });
        return;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Build a vector of length `n` from `f`.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize) -> T + Sync + Send,
{
    let mut out = vec![T::default(); n];
    fill(&mut out, f);
    out
}

/// Map each item of `items` in parallel, preserving order.
pub fn map_items<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Deterministic sum of `f(i)` for `i < n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    };
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        let parts: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
        return parts.iter().sum();
    }
    (0..chunks).map(partial).sum()
}

/// Maximum of `f(i)` for `i < n` (`-inf` when empty). Order independent.
pub fn max<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(&f)
            .reduce(|| f64::NEG_INFINITY, f64::max);
    }
    (0..n).map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// Count indices satisfying `pred`.
pub fn count<F>(n: usize, pred: F) -> usize
where
    F: Fn(usize) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().with_min_len(CHUNK).filter(|&i| pred(i)).count();
    }
    (0..n).filter(|&i| pred(i)).count()
}

/// Apply `f(i, &mut out[i])` to the indices listed in `idx`.
///
/// The caller guarantees the indices are distinct; each update may read any
/// data except the slots being written in the same call.
pub fn update_indices<F>(out: &mut [f64], idx: &[u32], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    // Compute then scatter: reads see the state from before this call.
    let vals = {
        let compute = |&i: &u32| f(i as usize);
        map_items(idx, compute)
    };
    for (&i, v) in idx.iter().zip(vals) {
        out[i as usize] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_split_independent() {
        let f = |i: usize| 1.0 / (1.0 + i as f64);
        set_parallel(false);
        let a = sum(100_000, f);
        set_parallel(true);
        let b = sum(100_000, f);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn max_and_count() {
        assert_eq!(max(0, |_| 1.0), f64::NEG_INFINITY);
        assert_eq!(max(10, |i| i as f64), 9.0);
        assert_eq!(count(10, |i| i % 2 == 0), 5);
    }
}
