//! Data-parallel helpers. With the `parallel` feature these fan out over a
//! rayon pool; without it they run on the calling thread. Output order is
//! always the input order, so callers get identical results either way.

/// Maps `f` over `items` using at most `workers` threads.
pub fn map_bounded<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    imp::map_bounded(items, workers.max(1), f)
}

/// Maps `f` over `0..n` on the global pool (or sequentially).
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    imp::map_range(n, f)
}

/// Whether this build was compiled with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn map_bounded<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        if workers == 1 || items.len() < 2 {
            return items.iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map_bounded<T, U, F>(items: &[T], _workers: usize, f: F) -> Vec<U>
    where
        F: Fn(&T) -> U,
    {
        items.iter().map(f).collect()
    }

    pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
    where
        F: Fn(usize) -> U,
    {
        (0..n).map(f).collect()
    }
}
