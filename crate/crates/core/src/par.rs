//! Execution strategy for data-parallel loops.
//!
//! Every parallel path maps over a slice and returns results in input order.
//! Reductions happen afterwards, sequentially, so the floating-point result
//! does not depend on the thread count or on whether `parallel` is enabled.

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon global pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Ordered map over `items`.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Ordered map over fixed-size chunks. The chunking depends only on
    /// `chunk_size`, never on the number of threads.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk_size: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk_size = chunk_size.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_chunks(chunk_size).map(f).collect();
        }
        items.chunks(chunk_size).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&items, |x| x * x);
        let par = Execution::Parallel.map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 999 * 999);
    }

    #[test]
    fn chunked_float_sums_are_mode_independent() {
        let items: Vec<f64> = (0..10_001).map(|i| (i as f64).sin() * 1e-3).collect();
        let total = |mode: Execution| -> f64 {
            mode.map_chunks(&items, 64, |c| c.iter().sum::<f64>())
                .into_iter()
                .sum()
        };
        assert_eq!(
            total(Execution::Sequential).to_bits(),
            total(Execution::Parallel).to_bits()
        );
    }
}
