//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the [`Exec::Parallel`] strategy fans work out
//! over the rayon pool. Without it every strategy runs sequentially. Results
//! are always collected in index order, so reductions over them are
//! bit-identical whichever strategy ran.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for the data-parallel inner loops.
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

    /// `(0..n).map(f).collect()`, possibly in parallel, always in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to each chunk of `rows` consecutive rows of a row-major buffer.
    pub fn for_each_row_chunk<F>(self, data: &mut [f64], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
        data.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }

    /// Maps over owned items, preserving order.
    pub fn map_vec<I, T, F>(self, items: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }
}

/// Maps over `items` on a dedicated pool of `jobs` workers, preserving order.
/// Runs inline when `jobs <= 1` or without the `parallel` feature.
pub fn map_with_jobs<I, T, F>(items: Vec<I>, jobs: usize, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| items.into_par_iter().map(f).collect());
        }
    }
    let _ = jobs;
    items.into_iter().map(f).collect()
}
