//! Thread-pool executor.

use metaaf_core::exec::Executor;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `threads == 0` uses one thread per core.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        self.pool.install(|| {
            let f = &f;
            (0..n).into_par_iter().map(f).collect()
        })
    }
}
