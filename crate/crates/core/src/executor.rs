//! Pluggable execution of independent, indexed jobs.
//!
//! Sweeps in this crate hand their cells to an [`Executor`] and receive the
//! results in index order, so the output never depends on how (or whether)
//! the jobs ran in parallel. The library itself only ships [`Sequential`];
//! parallel executors live with the application that owns the thread pool.

pub trait Executor: Sync {
    /// Evaluates `job(i)` for `i in 0..n` and returns the results ordered by `i`.
    fn run<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn run<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(job).collect()
    }
}
