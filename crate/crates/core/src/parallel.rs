//! Task fan-out for independent subproblems.
//!
//! With the `parallel` feature (default) tasks run on a rayon pool sized
//! to the requested worker count; without it, or with one worker, they run
//! in order on the calling thread. Results are always returned in task
//! order and each task sees only its own index, so outputs do not depend on
//! scheduling.

/// Runs `f(0), ..., f(count - 1)` on up to `workers` threads.
pub fn map_tasks<R, F>(count: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && count > 1 {
            use rayon::prelude::*;
            let threads = workers.min(count);
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => return pool.install(|| (0..count).into_par_iter().map(&f).collect()),
                Err(_) => return (0..count).map(f).collect(),
            }
        }
    }
    let _ = workers;
    (0..count).map(f).collect()
}

/// Whether this build can actually run tasks concurrently.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
