//! Indexed parallel map abstraction. The core ships a sequential executor;
//! the `metaaf` crate provides a thread-pool one.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// `(0..n).map(f)` in index order, possibly evaluated concurrently.
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}
