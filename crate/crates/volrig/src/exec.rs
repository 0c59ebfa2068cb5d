use rayon::prelude::*;
use volrig_core::exec::Executor;

/// Rayon-backed executor. Results are collected in index order, so output
/// does not depend on the thread count.
pub struct Parallel {
    pool: Option<rayon::ThreadPool>,
}

impl Parallel {
    /// Uses the global pool.
    pub fn global() -> Self {
        Self { pool: None }
    }

    /// Dedicated pool with `threads` workers.
    pub fn with_threads(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool");
        Self { pool: Some(pool) }
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let run = || (0..n).into_par_iter().map(&f).collect();
        match &self.pool {
            Some(p) => p.install(run),
            None => run(),
        }
    }
}
