//! Checkpoint container: one JSON document holding the fitted predictor,
//! the dummy sampler, preprocessing and the training configuration.
//!
//! Each network is written as a header (head, dropout, per-layer shapes)
//! followed by row-major parameter arrays:
//!
//! ```text
//! {
//!   "format": "fairdummies-checkpoint", "version": 1,
//!   "task": "regression", "seed": 7,
//!   "predictor": {
//!     "head": "identity", "dropout": 0.0,
//!     "layers": [ { "in_dim": 2, "out_dim": 1,
//!                   "weights": [w00, w10], "bias": [b0] } ]
//!   },
//!   "sampler": { "kind": "continuous", ... },
//!   "standardizer": { "means": [...], "scales": [...] },
//!   "response_scaler": { "mean": ..., "scale": ... },
//!   "config": { ... },
//!   ...
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so loading
//! reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{ResponseScaler, Schema, Standardizer, Task};
use crate::dummies::DummySampler;
use crate::error::{Error, Result};
use crate::fairtrain::{FairModel, ModelSpec, TrainConfig};
use crate::nn::{Activation, Dense, DiffModel};

pub const FORMAT: &str = "fairdummies-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(in_dim, out_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub head: Activation,
    pub dropout: f64,
    pub layers: Vec<LayerRecord>,
}

impl ModelRecord {
    pub fn from_model(model: &DiffModel) -> Self {
        ModelRecord {
            head: model.head(),
            dropout: model.dropout(),
            layers: model
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<DiffModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if l.bias.len() != l.out_dim {
                    return Err(Error::Checkpoint(format!(
                        "bias has {} entries for {} outputs",
                        l.bias.len(),
                        l.out_dim
                    )));
                }
                let weights = Array2::from_shape_vec((l.in_dim, l.out_dim), l.weights.clone())
                    .map_err(|e| Error::Checkpoint(format!("weight array: {e}")))?;
                Ok(Dense {
                    weights,
                    bias: Array1::from(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DiffModel::from_layers(layers, self.head, self.dropout)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub seed: u64,
    pub predictor: ModelRecord,
    pub predictor_spec: ModelSpec,
    pub sampler: DummySampler,
    /// Feature standardization fitted on the training rows.
    pub standardizer: Option<Standardizer>,
    pub response_scaler: ResponseScaler,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    /// Source schema for CSV-backed runs.
    #[serde(default)]
    pub schema: Option<Schema>,
}

impl Checkpoint {
    pub fn new(
        model: &FairModel,
        predictor_spec: &ModelSpec,
        standardizer: Option<Standardizer>,
    ) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            task: model.task,
            seed: model.config.seed,
            predictor: ModelRecord::from_model(&model.predictor),
            predictor_spec: predictor_spec.clone(),
            sampler: model.sampler.clone(),
            standardizer,
            response_scaler: model.scaler,
            config: model.config.clone(),
            feature_names: Vec::new(),
            class_names: None,
            schema: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format tag '{}'",
                c.format
            )));
        }
        if c.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                c.version
            )));
        }
        c.predictor.to_model()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn predictor(&self) -> Result<DiffModel> {
        self.predictor.to_model()
    }

    /// Predictions on the response scale for raw (unstandardized) features.
    pub fn predict(&self, x: &ndarray::ArrayView2<f64>) -> Result<Array2<f64>> {
        let model = self.predictor()?;
        let out = match &self.standardizer {
            Some(s) => model.forward(&s.apply(x)?.view())?,
            None => model.forward(x)?,
        };
        Ok(match self.task {
            Task::Regression => {
                let s = self.response_scaler;
                out.mapv(|v| s.inverse(v))
            }
            Task::Classification => out,
        })
    }
}
