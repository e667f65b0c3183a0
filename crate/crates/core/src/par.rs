//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool of
//! the configured size. Without it, or with [`Executor::sequential`], every map
//! runs in order on the calling thread. Output order always matches input
//! order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    threads: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("mode", &self.mode()).field("threads", &self.threads).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self {
            #[cfg(feature = "parallel")]
            pool: None,
            threads: 1,
        }
    }

    /// A pool of `threads` workers; `0` picks the number of logical CPUs.
    /// Falls back to sequential execution when built without `parallel`.
    pub fn with_threads(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => {
                    let threads = pool.current_num_threads();
                    Self { pool: Some(pool), threads }
                }
                Err(e) => {
                    log::warn!("could not build worker pool ({e}); running sequentially");
                    Self::sequential()
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Self::sequential()
        }
    }

    pub fn new(execution: Execution, threads: usize) -> Self {
        match execution {
            Execution::Sequential => Self::sequential(),
            Execution::Parallel => Self::with_threads(threads),
        }
    }

    pub fn mode(&self) -> Execution {
        #[cfg(feature = "parallel")]
        if self.pool.is_some() {
            return Execution::Parallel;
        }
        Execution::Sequential
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }

    /// Like [`Executor::map_range`] but stops at the first error in index order.
    pub fn try_map_range<R, E, F>(&self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}
