//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper produces results in input order, and every reduction is
//! performed over fixed-size chunks that are combined left to right. The
//! chunking does not depend on the number of worker threads, so sequential
//! and parallel execution return bit-identical floating point results.
//!
//! With the `parallel` feature disabled, [`Exec::Parallel`] silently runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items folded together before partial sums are combined.
pub const REDUCE_CHUNK: usize = 64;

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

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Sums the vectors produced by `f(i)` for `i in 0..n` into a vector of
    /// length `dim`.
    ///
    /// `f` adds its contribution into the accumulator it is handed. Items are
    /// folded in chunks of [`REDUCE_CHUNK`]; chunk partials are then added in
    /// chunk order.
    pub fn sum_vectors<F>(self, n: usize, dim: usize, f: F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let chunks = n.div_ceil(REDUCE_CHUNK);
        let fold_chunk = |c: usize| {
            let mut acc = vec![0.0; dim];
            let end = ((c + 1) * REDUCE_CHUNK).min(n);
            for i in c * REDUCE_CHUNK..end {
                f(i, &mut acc);
            }
            acc
        };
        let partials = self.map_range(chunks, fold_chunk);
        let mut total = vec![0.0; dim];
        for p in partials {
            for (t, x) in total.iter_mut().zip(p) {
                *t += x;
            }
        }
        total
    }

    /// Chunked scalar sum, see [`Exec::sum_vectors`].
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(REDUCE_CHUNK);
        let partials = self.map_range(chunks, |c| {
            let end = ((c + 1) * REDUCE_CHUNK).min(n);
            (c * REDUCE_CHUNK..end).map(&f).sum::<f64>()
        });
        partials.into_iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_sums_are_bit_identical() {
        let n = 1000;
        let term = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (i as f64 + 1.0);
        let a = Exec::Sequential.sum(n, term);
        let b = Exec::Parallel.sum(n, term);
        assert_eq!(a.to_bits(), b.to_bits());

        let va = Exec::Sequential.sum_vectors(n, 3, |i, acc| {
            for (k, x) in acc.iter_mut().enumerate() {
                *x += term(i + k);
            }
        });
        let vb = Exec::Parallel.sum_vectors(n, 3, |i, acc| {
            for (k, x) in acc.iter_mut().enumerate() {
                *x += term(i + k);
            }
        });
        assert_eq!(va, vb);
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<usize> = (0..500).collect();
        let ys = Exec::Parallel.map(&xs, |x| x * 2);
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(Exec::Sequential.sum(0, |_| 1.0) == 0.0);
    }
}
