//! Index-ordered fan-out.
//!
//! With the `parallel` feature the work runs on a dedicated rayon pool;
//! without it (or with a single worker) everything runs on the calling
//! thread. Either way results come back in input order, never completion
//! order.
//!
//! A map issued from a worker of a different pool runs inline: blocking a
//! rayon worker on a second pool lets it steal more outer jobs while it
//! waits, and the nesting can exhaust its stack.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone)]
pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .field("parallel", &self.is_parallel())
            .finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// An executor with up to `workers` threads. Falls back to sequential
    /// execution for `workers <= 1` or when built without `parallel`.
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            if workers > 1 {
                match rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("span-ensemble-{i}"))
                    .build()
                {
                    Ok(pool) => {
                        return Executor {
                            workers,
                            pool: Some(Arc::new(pool)),
                        }
                    }
                    Err(err) => {
                        log::warn!("could not start worker pool ({err}); running sequentially");
                    }
                }
            }
            Executor {
                workers: 1,
                pool: None,
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Executor { workers: 1 }
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    #[cfg(feature = "parallel")]
    fn usable_pool(&self) -> Option<&rayon::ThreadPool> {
        let pool = self.pool.as_deref()?;
        let foreign =
            rayon::current_thread_index().is_some() && pool.current_thread_index().is_none();
        (!foreign).then_some(pool)
    }

    /// Applies `f` to every item; output `i` corresponds to input `i`.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = self.usable_pool() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// `map` over the index range `0..n`.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = self.usable_pool() {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}
