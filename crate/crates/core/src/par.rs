//! Thin indirection over rayon so the data-parallel call sites compile to
//! plain sequential loops when the `parallel` feature is off. Output order
//! always follows input order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map a function over a slice, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Map a function over the index range `0..n`, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map_indices<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Whether this build runs data-parallel sections on a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
