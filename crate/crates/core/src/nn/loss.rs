use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::model::Activation;
use crate::error::{Error, Result};

/// Floor applied to probabilities before every logarithm.
pub const DEFAULT_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    /// Multi-class cross-entropy against one-hot (or soft) target rows.
    CrossEntropy,
    BinaryCrossEntropy,
}

/// Per-sample loss summed over output columns, averaged over rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub kind: LossKind,
    pub clip: f64,
}

impl Loss {
    pub fn new(kind: LossKind) -> Self {
        Loss {
            kind,
            clip: DEFAULT_CLIP,
        }
    }

    pub fn mse() -> Self {
        Self::new(LossKind::MeanSquaredError)
    }

    pub fn cross_entropy() -> Self {
        Self::new(LossKind::CrossEntropy)
    }

    pub fn binary_cross_entropy() -> Self {
        Self::new(LossKind::BinaryCrossEntropy)
    }

    /// The output head this loss is defined against.
    pub fn head(&self) -> Activation {
        match self.kind {
            LossKind::MeanSquaredError => Activation::Identity,
            LossKind::CrossEntropy => Activation::Softmax,
            LossKind::BinaryCrossEntropy => Activation::Sigmoid,
        }
    }

    pub fn check_head(&self, head: Activation) -> Result<()> {
        if head != self.head() {
            return Err(Error::Config(format!(
                "{:?} loss requires a {:?} head, model has {:?}",
                self.kind,
                self.head(),
                head
            )));
        }
        Ok(())
    }

    fn check(&self, pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<()> {
        if pred.dim() != target.dim() {
            return Err(Error::shape(
                format!("target {:?}", pred.dim()),
                format!("{:?}", target.dim()),
            ));
        }
        if pred.nrows() == 0 {
            return Err(Error::EmptyInput("loss over zero rows".into()));
        }
        Ok(())
    }

    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn value(&self, pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<f64> {
        self.check(pred, target)?;
        let n = pred.nrows() as f64;
        let total: f64 = match self.kind {
            LossKind::MeanSquaredError => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum(),
            LossKind::CrossEntropy => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| if *t == 0.0 { 0.0 } else { -t * self.clamp(*p).ln() })
                .sum(),
            LossKind::BinaryCrossEntropy => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| {
                    let q = self.clamp(*p);
                    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
                })
                .sum(),
        };
        Ok(total / n)
    }

    /// Derivative of [`Loss::value`] with respect to `pred`. Entries clipped
    /// away by the probability floor get zero derivative.
    pub fn grad(&self, pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(pred, target)?;
        let n = pred.nrows() as f64;
        let inside = |p: f64| p > self.clip && p < 1.0 - self.clip;
        let mut g = Array2::zeros(pred.raw_dim());
        ndarray::Zip::from(&mut g)
            .and(pred)
            .and(target)
            .for_each(|g, &p, &t| {
                *g = match self.kind {
                    LossKind::MeanSquaredError => 2.0 * (p - t) / n,
                    LossKind::CrossEntropy => {
                        if inside(p) && t != 0.0 {
                            -t / (p * n)
                        } else {
                            0.0
                        }
                    }
                    LossKind::BinaryCrossEntropy => {
                        if inside(p) {
                            (-t / p + (1.0 - t) / (1.0 - p)) / n
                        } else {
                            0.0
                        }
                    }
                }
            });
        Ok(g)
    }
}
