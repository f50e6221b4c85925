//! Worker pool backing every parallel sweep.

use atom_lattice::executor::Executor;
use rayon::prelude::*;

/// Rayon pool with a fixed worker count. Results come back in index order,
/// so they never depend on the number of workers.
pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    /// `threads = None` uses the available parallelism.
    pub fn new(threads: Option<usize>) -> Result<Self, String> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        builder.build().map(|inner| Self { inner }).map_err(|e| e.to_string())
    }

    pub fn threads(&self) -> usize {
        self.inner.current_num_threads()
    }
}

impl Executor for Pool {
    fn run<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.inner.install(|| (0..n).into_par_iter().map(job).collect())
    }
}
