use serde::{Deserialize, Serialize};

use super::model::{DiffModel, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Heavy-ball SGD: `v ← m·v + g`, `w ← w − μ·v`.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::Sgd { momentum }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer kind plus learning rate; the serializable half of an [`Optimizer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl OptimizerSpec {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::sgd(momentum),
            lr,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::adam(),
            lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        match self.kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => Err(
                Error::Config(format!("momentum {momentum} outside [0, 1)")),
            ),
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                Err(Error::Config("invalid Adam decay rates or epsilon".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Optimizer> {
        self.validate()?;
        Ok(Optimizer {
            spec: *self,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }
}

/// First-order optimizer with per-parameter state, lazily sized on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    steps: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, model: &mut DiffModel, grads: &Gradients) -> Result<()> {
        let layers = model.layers_mut();
        if grads.layers.len() != layers.len()
            || grads
                .layers
                .iter()
                .zip(layers.iter())
                .any(|(g, l)| g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len())
        {
            return Err(Error::shape("gradients shaped like the model", "mismatched gradients"));
        }
        if !grads.is_finite() {
            return Err(Error::divergence("non-finite gradient entry"));
        }
        let n: usize = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if self.first.len() != n {
            self.first = vec![0.0; n];
            if matches!(self.spec.kind, OptimizerKind::Adam { .. }) {
                self.second = vec![0.0; n];
            }
        }
        self.steps += 1;
        let lr = self.spec.lr;
        let params = layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let gs = grads
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()));
        match self.spec.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((w, g), v) in params.zip(gs).zip(self.first.iter_mut()) {
                    *v = momentum * *v + g;
                    *w -= lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((w, g), m), v) in params
                    .zip(gs)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
