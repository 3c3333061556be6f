//! Order-preserving map over a slice, on a rayon pool when the `parallel`
//! feature is enabled and sequentially otherwise.
//!
//! Results come back in input order whatever the worker count, so callers
//! get identical output for 1 or N workers.

/// Worker count; `0` means one worker per available core.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Workers(pub usize);

impl Workers {
    pub fn sequential() -> Self {
        Workers(1)
    }
}

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], workers: Workers, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    if workers.0 == 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers.0).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], _workers: Workers, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
