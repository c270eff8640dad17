//! Datasets, synthetic generators, CSV ingestion, feature standardization
//! and the train / holdout / test split.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, load_csv_from_reader, write_csv, write_table, AttributeColumn, FeatureColumn, LoadOptions, ResponseColumn, Schema, Table};
pub use synthetic::{
    generate_synthetic, nursery_like_table, synthetic_regression_table, NurseryLikeConfig,
    SyntheticConfig,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// One response value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseValue {
    Continuous(f64),
    Class(usize),
}

/// Response vector. Class labels are 0-based indices into `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Continuous(Vec<f64>),
    Classes { labels: Vec<usize>, n_classes: usize },
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Continuous(v) => v.len(),
            Response::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Response::Continuous(_) => Task::Regression,
            Response::Classes { .. } => Task::Classification,
        }
    }

    pub fn get(&self, i: usize) -> ResponseValue {
        match self {
            Response::Continuous(v) => ResponseValue::Continuous(v[i]),
            Response::Classes { labels, .. } => ResponseValue::Class(labels[i]),
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Response::Continuous(_) => None,
            Response::Classes { n_classes, .. } => Some(*n_classes),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Response {
        match self {
            Response::Continuous(v) => Response::Continuous(idx.iter().map(|&i| v[i]).collect()),
            Response::Classes { labels, n_classes } => Response::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        }
    }

    /// `n × 1` column for continuous responses, `n × L` one-hot rows for classes.
    pub fn encoded(&self) -> Array2<f64> {
        match self {
            Response::Continuous(v) => Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i]),
            Response::Classes { labels, n_classes } => {
                let mut m = Array2::zeros((labels.len(), *n_classes));
                for (i, &l) in labels.iter().enumerate() {
                    m[[i, l]] = 1.0;
                }
                m
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Response::Continuous(v) => {
                if let Some(i) = v.iter().position(|y| !y.is_finite()) {
                    return Err(Error::Ingest {
                        row: i,
                        column: "response".into(),
                        message: "non-finite response".into(),
                    });
                }
            }
            Response::Classes { labels, n_classes } => {
                if *n_classes < 2 {
                    return Err(Error::Config("classification needs at least 2 classes".into()));
                }
                if let Some(i) = labels.iter().position(|&l| l >= *n_classes) {
                    return Err(Error::Ingest {
                        row: i,
                        column: "response".into(),
                        message: format!("class {} outside 0..{}", labels[i], n_classes),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Features `x`, binary sensitive attribute `a` and response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub a: Vec<u8>,
    pub y: Response,
    pub feature_names: Vec<String>,
    /// Class names for classification responses, index-aligned with labels.
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, a: Vec<u8>, y: Response, feature_names: Vec<String>) -> Result<Self> {
        let n = x.nrows();
        if a.len() != n || y.len() != n {
            return Err(Error::shape(
                format!("{n} rows in x, a and y"),
                format!("a: {}, y: {}", a.len(), y.len()),
            ));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::shape(x.ncols(), format!("{} feature names", feature_names.len())));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(Error::Ingest {
                row: i,
                column: "attribute".into(),
                message: format!("attribute value {} is not binary", a[i]),
            });
        }
        y.validate()?;
        Ok(Dataset {
            x,
            a,
            y,
            feature_names,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn task(&self) -> Task {
        self.y.task()
    }

    pub fn a_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: self.y.subset(idx),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Copy with the attribute appended as the last feature column.
    pub fn with_attribute_feature(&self) -> Dataset {
        let n = self.len();
        let mut x = Array2::zeros((n, self.n_features() + 1));
        x.slice_mut(ndarray::s![.., ..self.n_features()]).assign(&self.x);
        for i in 0..n {
            x[[i, self.n_features()]] = f64::from(self.a[i]);
        }
        let mut names = self.feature_names.clone();
        names.push("attribute".into());
        Dataset {
            x,
            a: self.a.clone(),
            y: self.y.clone(),
            feature_names: names,
            class_names: self.class_names.clone(),
        }
    }
}

/// Per-column affine transform fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Population (denominator-n) statistics. Zero-variance columns get a unit divisor.
    pub fn fit(x: &ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let means: Array1<f64> = x.sum_axis(Axis(0)) / n;
        let scales = x
            .columns()
            .into_iter()
            .zip(means.iter())
            .map(|(col, m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer {
            means: means.to_vec(),
            scales,
        }
    }

    pub fn fit_transform(x: &ArrayView2<f64>) -> (Self, Array2<f64>) {
        let s = Self::fit(x);
        let t = s.apply(x).expect("fitted on the same width");
        (s, t)
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::shape(self.means.len(), x.ncols()));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

/// Affine rescaling of a continuous response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScaler {
    pub mean: f64,
    pub scale: f64,
}

impl ResponseScaler {
    pub fn identity() -> Self {
        ResponseScaler { mean: 0.0, scale: 1.0 }
    }

    pub fn fit(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        ResponseScaler {
            mean,
            scale: if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.scale + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub holdout: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            holdout: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.holdout, self.test];
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }
}

/// Disjoint index sets produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `0..n`. Part sizes are the rounded fractions,
/// with the test part taking the remainder.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if n < 10 {
        return Err(Error::Split(format!("need at least 10 rows to split, got {n}")));
    }
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_hold = (n as f64 * spec.holdout).round() as usize;
    if n_train == 0 || n_hold == 0 || n_train + n_hold >= n {
        return Err(Error::Split(format!("fractions leave an empty part for n = {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(spec.seed, 0));
    let test = idx.split_off(n_train + n_hold);
    let holdout = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        holdout,
        test,
    })
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let s = split_indices(dataset.len(), spec)?;
    Ok((dataset.subset(&s.train), dataset.subset(&s.holdout), dataset.subset(&s.test)))
}
