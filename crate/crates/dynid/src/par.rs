//! Data-parallel helpers.
//!
//! With the `rayon` feature (default) these fan out over the global thread
//! pool; without it they run sequentially. All helpers preserve input order
//! so results are identical either way.

#[cfg(feature = "rayon")]
use rayon::prelude::*;

/// Map over a slice, collecting results in input order.
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "rayon")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "rayon"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map over an index range, collecting results in index order.
pub fn map_range<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "rayon")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "rayon"))]
    {
        (0..n).map(f).collect()
    }
}

/// Run a closure on a single-threaded pool. Used by benches to compare the
/// parallel and sequential paths within one build.
pub fn run_single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "rayon")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool")
            .install(f)
    }
    #[cfg(not(feature = "rayon"))]
    {
        f()
    }
}
