//! Small neural-network substrate: dense networks and a GRU cell with
//! hand-derived backward passes, gradient-descent and Adam optimizers, Polyak
//! averaging and a plain-text checkpoint format. Everything is `f64`.

mod checkpoint;
mod dense;
mod gru;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

pub use checkpoint::{read_file, TextReader, TextWriter};
pub use dense::{Activation, DenseCache, DenseLayer, DenseNet};
pub use gru::{GruCache, GruCell};
pub use optim::{soft_update, Adam, Optimizer, Sgd};

use crate::{Error, Result};

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

/// Identity used to tie forward caches to the network that produced them.
pub(crate) fn fresh_instance_id() -> u64 {
    NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed)
}

/// Anything with an ordered list of parameter tensors.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero_grads(&self) -> GradientSet {
        GradientSet {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Copies parameters from `other`, which must have the same shapes.
    fn copy_from(&mut self, other: &Self) -> Result<()>
    where
        Self: Sized,
    {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        check_shapes(&dst.iter().map(|t| t.len()).collect::<Vec<_>>(), &src)?;
        for (d, s) in dst.iter_mut().zip(src) {
            d.copy_from_slice(s);
        }
        Ok(())
    }
}

/// Gradients mirroring a network's parameter tensors, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn shapes(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.len()).collect()
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        check_shapes(
            &self.shapes(),
            &other.tensors.iter().map(|t| t.as_slice()).collect::<Vec<_>>(),
        )?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&x| x == 0.0)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    /// Sums gradient sets in order. `None` for an empty input.
    pub fn sum_ordered(parts: impl IntoIterator<Item = GradientSet>) -> Option<GradientSet> {
        let mut iter = parts.into_iter();
        let mut acc = iter.next()?;
        for g in iter {
            acc.add_assign(&g).expect("gradient shapes agree within a batch");
        }
        Some(acc)
    }
}

pub(crate) fn check_shapes(expected: &[usize], actual: &[&[f64]]) -> Result<()> {
    if expected.len() != actual.len() {
        return Err(Error::dim("parameter tensor count", expected.len(), actual.len()));
    }
    for (e, a) in expected.iter().zip(actual) {
        if *e != a.len() {
            return Err(Error::dim("parameter tensor", *e, a.len()));
        }
    }
    Ok(())
}

/// Sum of per-item gradients and losses over a batch.
///
/// Items are processed in fixed chunks of `BATCH_CHUNK`; chunk results are
/// added in order, so the result is identical under every [`Execution`].
///
/// [`Execution`]: crate::par::Execution
pub fn accumulate_batch<T, P, F>(
    exec: crate::par::Execution,
    params: &P,
    items: &[T],
    per_item: F,
) -> Result<(GradientSet, f64)>
where
    T: Sync,
    P: Parameterized + Sync,
    F: Fn(&T, &mut GradientSet) -> Result<f64> + Sync + Send,
{
    let parts = exec.map_chunks(items, BATCH_CHUNK, |chunk| -> Result<(GradientSet, f64)> {
        let mut g = params.zero_grads();
        let mut loss = 0.0;
        for item in chunk {
            loss += per_item(item, &mut g)?;
        }
        Ok((g, loss))
    });
    let mut total = params.zero_grads();
    let mut loss = 0.0;
    for part in parts {
        let (g, l) = part?;
        total.add_assign(&g)?;
        loss += l;
    }
    Ok((total, loss))
}

pub const BATCH_CHUNK: usize = 16;
