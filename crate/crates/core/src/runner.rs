//! Batch execution of independent runs.
//!
//! Runs never share mutable state, so a batch of (config, seed) pairs can
//! be spread over a thread pool. Results always come back in input order.
//! Without the `parallel` feature every batch runs sequentially.

use crate::data_io::Stream;
use crate::engine::{run, EngineError, RunConfig, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// The global rayon pool.
    #[default]
    Parallel,
    /// A dedicated pool with this many threads.
    Threads(usize),
}

impl Execution {
    /// `jobs == 1` means sequential; 0 means the global pool.
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            0 => Execution::Parallel,
            1 => Execution::Sequential,
            n => Execution::Threads(n),
        }
    }
}

/// Maps `f` over `items` under the requested execution mode.
pub fn map_batch<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        #[cfg(feature = "parallel")]
        Execution::Threads(n) => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => items.iter().map(f).collect(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel | Execution::Threads(_) => items.iter().map(f).collect(),
    }
}

/// Runs every config against the same stream.
pub fn run_batch(
    stream: &Stream,
    configs: &[RunConfig],
    exec: Execution,
) -> Vec<Result<RunReport, EngineError>> {
    map_batch(configs, exec, |cfg| run(stream, cfg))
}
