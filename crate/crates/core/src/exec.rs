//! Execution strategy for the data-parallel loops.
//!
//! Work is always split into chunks of a fixed size that does not depend on
//! the thread count, and every chunk writes a disjoint region of the output.
//! Sequential and parallel runs therefore produce bitwise-identical results.
//! Without the `parallel` feature, [`Exec::Parallel`] runs sequentially.

use ndarray::{ArrayViewMut2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Strategy matching a requested thread count (`1` = strict sequential).
    pub fn for_threads(threads: usize) -> Self {
        if threads == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    /// Runs `f` on every `chunk`-row block of `out`. The closure receives the
    /// index of the block's first row.
    pub fn for_each_row_chunk<F>(self, out: &mut ArrayViewMut2<'_, f64>, chunk: usize, f: F)
    where
        F: Fn(usize, ArrayViewMut2<'_, f64>) + Sync + Send,
    {
        let chunk = chunk.max(1);
        let blocks: Vec<(usize, ArrayViewMut2<'_, f64>)> = out
            .axis_chunks_iter_mut(Axis(0), chunk)
            .enumerate()
            .map(|(i, v)| (i * chunk, v))
            .collect();
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                blocks.into_par_iter().for_each(|(start, v)| f(start, v));
            }
            _ => blocks.into_iter().for_each(|(start, v)| f(start, v)),
        }
    }

    /// Ordered map over `items`.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Runs `f` inside a pool of `threads` workers (`0` = all available cores).
/// Without the `parallel` feature this just calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn chunks_cover_all_rows() {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut out = Array2::<f64>::zeros((10, 3));
            exec.for_each_row_chunk(&mut out.view_mut(), 4, |start, mut v| {
                for (i, mut row) in v.rows_mut().into_iter().enumerate() {
                    row.fill((start + i) as f64);
                }
            });
            for i in 0..10 {
                assert!(out.row(i).iter().all(|&x| x == i as f64));
            }
        }
    }

    #[test]
    fn map_keeps_order() {
        let xs: Vec<u32> = (0..100).collect();
        assert_eq!(Exec::Parallel.map(&xs, |x| x * 2), Exec::Sequential.map(&xs, |x| x * 2));
    }
}
