//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel code path in the crate goes through [`Parallelism`], so the
//! same routine can be timed both ways. Without the `parallel` feature the
//! `Threads` variant silently degrades to sequential execution.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    /// Use the rayon thread pool when the crate is built with `parallel`.
    #[default]
    Threads,
    /// Run everything on the calling thread.
    Sequential,
}

impl Parallelism {
    /// True when work will actually be spread over the thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Threads
    }

    /// `f(i)` for `i in 0..n`, collected in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Runs `f(i)` for `i in 0..n` for its side effects.
    pub fn for_each<F>(self, n: usize, f: F)
    where
        F: Fn(usize) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            (0..n).into_par_iter().for_each(f);
            return;
        }
        (0..n).for_each(f)
    }

    /// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `data`.
    pub fn chunks_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Raw pointer that may cross thread boundaries. Callers guarantee that
/// concurrent users touch disjoint memory.
#[derive(Clone, Copy)]
pub(crate) struct SyncPtr(pub *mut f64);

unsafe impl Send for SyncPtr {}
unsafe impl Sync for SyncPtr {}

impl SyncPtr {
    #[inline]
    pub fn get(self) -> *mut f64 {
        self.0
    }
}
