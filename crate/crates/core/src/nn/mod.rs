//! A small differentiable-model engine: dense ReLU networks with
//! identity / sigmoid / softmax heads, exact backpropagation, and SGD-momentum
//! and Adam optimizers.

pub mod gradcheck;
mod loss;
mod model;
mod optim;

pub use loss::{Loss, LossKind, DEFAULT_CLIP};
pub use model::{sigmoid, softmax_rows, Activation, Dense, DiffModel, ForwardTrace, Gradients, Mode};
pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Mean loss over the batch and its exact gradient with respect to every
/// parameter. Dropout masks (train mode) come from `rng`.
pub fn gradient<R: Rng + ?Sized>(
    model: &DiffModel,
    loss: &Loss,
    x: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    loss.check_head(model.head())?;
    let trace = model.forward_trace(x, rng)?;
    let value = loss.value(&trace.output().view(), target)?;
    let g_out = loss.grad(&trace.output().view(), target)?;
    let (grads, _) = model.backward(&trace, &g_out)?;
    Ok((value, grads))
}

/// Batch schedule for stochastic training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    FullBatch,
    Minibatch(usize),
}

impl BatchMode {
    /// Index batches covering `0..n` once. Minibatch order is shuffled with
    /// `rng`; the full-batch schedule draws nothing.
    pub fn epoch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        match *self {
            BatchMode::FullBatch => vec![(0..n).collect()],
            BatchMode::Minibatch(size) => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                idx.chunks(size.max(1)).map(|c| c.to_vec()).collect()
            }
        }
    }
}

pub fn select_rows(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Plain empirical-risk training for `epochs` passes.
pub fn train_erm<R: Rng + ?Sized>(
    model: &mut DiffModel,
    loss: &Loss,
    x: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    batch: BatchMode,
    optimizer: &mut Optimizer,
    epochs: usize,
    rng: &mut R,
) -> Result<()> {
    let n = x.nrows();
    for _ in 0..epochs {
        for idx in batch.epoch(n, rng) {
            let xb = select_rows(x, &idx);
            let tb = select_rows(target, &idx);
            let (_, g) = gradient(model, loss, &xb.view(), &tb.view(), rng)?;
            optimizer.step(model, &g)?;
        }
    }
    Ok(())
}
