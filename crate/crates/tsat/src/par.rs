//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature (the default), [`batch_map`] fans out over a
//! rayon pool; without it, it degrades to a plain sequential map. Either way
//! the output order equals the input order, so callers that reduce the
//! results left-to-right get bit-identical sums regardless of thread count.
//! [`batch_map_seq`] is always sequential and exists so benchmarks can
//! compare both paths in one build.

#[cfg(feature = "parallel")]
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference path with the same signature as [`batch_map`].
pub fn batch_map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Run `f` with all [`batch_map`] calls confined to one thread. Results are
/// bit-identical to any other thread count; this exists for single-core
/// timing measurements.
#[cfg(feature = "parallel")]
pub fn run_single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn run_single_threaded<T>(f: impl FnOnce() -> T) -> T {
    f()
}
