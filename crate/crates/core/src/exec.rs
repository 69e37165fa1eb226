//! Execution helpers: every data-parallel loop in the crate goes through
//! this module so that results are identical for any worker count and for
//! the sequential fallback (`--no-default-features`).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `0..n` and collect in index order. Parallel when the `parallel`
/// feature is enabled; outputs are position-stable either way.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Send + Sync>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_indexed`], always compiled; the bench suite
/// compares the two on identical workloads.
pub fn map_indexed_seq<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}
