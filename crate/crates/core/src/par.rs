//! Data-parallel execution with a sequential fallback.
//!
//! Hot loops (per-row image filters, batch simulation, per-image analysis)
//! take an [`Exec`] so callers and benchmarks can pick the path at runtime.
//! Without the `parallel` feature `Exec::Parallel` silently runs
//! sequentially. Both paths produce bit-identical results: work items are
//! independent and results are collected in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this mode will actually fan out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fill `out` in chunks of `chunk` elements; `f` receives the chunk index
    /// and the mutable chunk. Used for row-wise image passes.
    pub fn for_each_chunk<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(
            Exec::Sequential.map_range(64, |i| i + 1),
            Exec::Parallel.map_range(64, |i| i + 1)
        );
        let mut s = vec![0usize; 100];
        let mut p = vec![0usize; 100];
        Exec::Sequential.for_each_chunk(&mut s, 10, |r, c| c.iter_mut().for_each(|v| *v = r));
        Exec::Parallel.for_each_chunk(&mut p, 10, |r, c| c.iter_mut().for_each(|v| *v = r));
        assert_eq!(s, p);
        assert_eq!(s[95], 9);
    }
}
