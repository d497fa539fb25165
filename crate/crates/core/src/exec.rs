//! Thin dispatch layer between the rayon and sequential executions of
//! the data-parallel inner loops. Every helper is order-deterministic:
//! mapped collections preserve input order, so results are identical
//! with and without the `parallel` feature and for any thread count.
//!
//! Each call site passes the batch size below which the pool is not
//! worth engaging; tiny batches run inline either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Derives an independent RNG seed for a work item (RANSAC iteration,
/// keyframe, ...) so parallel streams never depend on scheduling.
/// splitmix64 finalizer over the seed xor a stride of the stream index.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps `f` over a slice, collecting results in input order. Runs on
/// the pool when the slice has at least `min_parallel` items.
#[cfg(feature = "parallel")]
pub(crate) fn map_slice<T, U, F>(items: &[T], min_parallel: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if items.len() < min_parallel {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_slice<T, U, F>(items: &[T], _min_parallel: usize, f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order. Runs on the
/// pool when `n` is at least `min_parallel`.
#[cfg(feature = "parallel")]
pub(crate) fn map_indices<U, F>(n: usize, min_parallel: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    if n < min_parallel {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<U, F>(n: usize, _min_parallel: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
