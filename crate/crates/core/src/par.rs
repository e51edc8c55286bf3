//! Execution policy for the batch entry points.
//!
//! Per-video and per-class work is embarrassingly parallel; every batch
//! function takes an [`Execution`] and fans out over rayon when asked to.
//! Results are collected in input order, so both policies produce identical
//! output, including bit-identical floating point (no parallel reductions).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch operations split independent work items across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Process items one after another on the calling thread.
    Sequential,
    /// Fan out over the current rayon thread pool. Falls back to sequential
    /// when the crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

pub(crate) fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub(crate) fn try_map<T, U, F>(exec: Execution, items: &[T], f: F) -> crate::Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> crate::Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}
