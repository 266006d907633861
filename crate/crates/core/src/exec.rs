//! Execution strategy for the data-parallel loops.
//!
//! With the `parallel` feature, [`Exec::Parallel`] fans work out over the
//! rayon pool. Without it, both variants run sequentially. Results are
//! collected in index order either way, and every work item owns its random
//! stream, so the choice never changes the output.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    pub fn try_map<R, E, F>(self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    /// True when work actually runs on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Configure the global pool from an environment variable, if set.
/// Returns the thread count that was requested.
/// Size the global worker pool. Returns false when a pool already exists or
/// the crate was built without parallelism.
#[cfg(feature = "parallel")]
pub fn init_thread_pool(threads: usize) -> bool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_ok()
}

#[cfg(not(feature = "parallel"))]
pub fn init_thread_pool(_threads: usize) -> bool {
    false
}
