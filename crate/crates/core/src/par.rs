//! Execution policy for the data-parallel loops.
//!
//! With the `parallel` feature (default) the hot loops run on rayon's pool;
//! without it every call site takes the sequential path. `Exec::Sequential`
//! forces the sequential path even when rayon is compiled in.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `(start..end).map(f).collect()`, possibly in parallel. Output order is preserved.
pub fn map_range<T, F>(exec: Exec, start: usize, end: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (start..end).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (start..end).map(f).collect()
}

/// Applies `f(offset, chunk)` to consecutive chunks of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Exec, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
        return;
    }
    let _ = exec;
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i * chunk, c);
    }
}
