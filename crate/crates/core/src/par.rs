//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps below run on the rayon
//! global pool when the caller asks for [`Exec::Parallel`]. Without the
//! feature every call is sequential and `Exec::Parallel` is accepted but
//! ignored, so downstream code never needs its own `cfg` switches.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution policy for per-node and per-sample loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `(0..len).map(f).collect()`, possibly in parallel. Output order is the
/// index order regardless of policy.
pub fn map_indices<R, F>(exec: Exec, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && len > 1 {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indices`]; the first error in index order is returned.
pub fn try_map_indices<R, E, F>(exec: Exec, len: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_indices(exec, len, f).into_iter().collect()
}

/// Map over a slice, possibly in parallel.
pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_indices(exec, items.len(), |i| f(&items[i]))
}
