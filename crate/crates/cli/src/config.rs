//! Experiment configuration file.
//!
//! One flat TOML table; every key is optional and unknown keys are rejected.
//! Relative paths are resolved against the directory holding the file.
//!
//! ```toml
//! # data
//! source = "synthetic"          # "synthetic" | "csv"
//! synthetic = "regression"      # "regression" | "nursery_like"
//! n = 4000
//! group1_fraction = 0.9
//! csv = "data.csv"              # source = "csv"
//! schema = "schema.toml"
//! include_attribute = false
//! split_train = 0.6
//! split_holdout = 0.2
//! split_test = 0.2
//!
//! # predictor and discriminator
//! model = "linear"              # "linear" | "two_layer"
//! hidden = 64
//! dropout = 0.5
//! discriminator_hidden = 30
//!
//! # fair training
//! lambda = 0.7
//! gamma = 10.0
//! outer_iters = 50
//! inner_steps = 60
//! optimizer_f = "sgd"           # "sgd" | "adam"
//! lr_f = 0.01
//! momentum_f = 0.9
//! optimizer_d = "sgd"
//! lr_d = 0.01
//! momentum_d = 0.0
//! batch_size = 0                # 0 = full batch
//! pretrain_epochs_f = 5
//! pretrain_epochs_d = 5
//! standardize_response = true
//!
//! # fair dummies test
//! test_resamples = 100
//! test_hidden = 64
//! test_dropout = 0.5
//! test_lr = 0.01
//! test_momentum = 0.9
//! test_epochs = 200
//! test_batch_size = 128
//!
//! # conformal sets and experiment
//! alpha = 0.1
//! reps = 20
//! seed = 0
//! baseline = true               # also fit the lambda = 0 model in benchmarks
//! out_dir = "out"
//! ```
//!
//! Training defaults depend on the task (see
//! [`TrainConfig::default_for`]); everything else has one default.

use std::path::{Path, PathBuf};

use fairdummies::data::{
    generate_synthetic, load_csv, nursery_like_table, LoadOptions, NurseryLikeConfig, Schema,
    SplitSpec, SyntheticConfig, Table, Task,
};
use fairdummies::data::{load_csv_from_reader, write_table, Dataset};
use fairdummies::fairtest::TestConfig;
use fairdummies::fairtrain::{default_discriminator, ModelSpec, TrainConfig};
use fairdummies::nn::{BatchMode, OptimizerKind, OptimizerSpec};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Regression,
    NurseryLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Linear,
    TwoLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

/// The file as written; see the module docs for keys.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub source: Option<Source>,
    pub synthetic: Option<SyntheticKind>,
    pub n: Option<usize>,
    pub group1_fraction: Option<f64>,
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub include_attribute: Option<bool>,
    pub split_train: Option<f64>,
    pub split_holdout: Option<f64>,
    pub split_test: Option<f64>,

    pub model: Option<ModelFamily>,
    pub hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub discriminator_hidden: Option<usize>,

    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub outer_iters: Option<usize>,
    pub inner_steps: Option<usize>,
    pub optimizer_f: Option<OptimizerName>,
    pub lr_f: Option<f64>,
    pub momentum_f: Option<f64>,
    pub optimizer_d: Option<OptimizerName>,
    pub lr_d: Option<f64>,
    pub momentum_d: Option<f64>,
    pub batch_size: Option<usize>,
    pub pretrain_epochs_f: Option<usize>,
    pub pretrain_epochs_d: Option<usize>,
    pub standardize_response: Option<bool>,

    pub test_resamples: Option<usize>,
    pub test_hidden: Option<usize>,
    pub test_dropout: Option<f64>,
    pub test_lr: Option<f64>,
    pub test_momentum: Option<f64>,
    pub test_epochs: Option<usize>,
    pub test_batch_size: Option<usize>,

    pub alpha: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub baseline: Option<bool>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config file: {e}")))
    }
}

/// Where the data comes from, with paths already resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        group1_fraction: Option<f64>,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub task: Task,
    pub include_attribute: bool,
    pub split: SplitSpec,
    pub predictor: ModelSpec,
    pub discriminator: ModelSpec,
    pub train: TrainConfig,
    pub test: TestConfig,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub baseline: bool,
    pub out_dir: PathBuf,
}

/// Command-line overrides, applied on top of the file. The binary fills
/// `out_dir` from `--out` or, failing that, [`OUT_DIR_ENV`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub const OUT_DIR_ENV: &str = "FAIRDUMMIES_OUT_DIR";

fn optimizer(
    name: Option<OptimizerName>,
    lr: Option<f64>,
    momentum: Option<f64>,
    default: OptimizerSpec,
) -> CliResult<OptimizerSpec> {
    let lr = lr.unwrap_or(default.lr);
    let (default_name, default_momentum) = match default.kind {
        OptimizerKind::Sgd { momentum } => (OptimizerName::Sgd, momentum),
        OptimizerKind::Adam { .. } => (OptimizerName::Adam, 0.0),
    };
    match name.unwrap_or(default_name) {
        OptimizerName::Adam if momentum.is_some() => {
            Err(CliError::config("momentum is an SGD setting; the optimizer is adam"))
        }
        OptimizerName::Adam => Ok(OptimizerSpec::adam(lr)),
        OptimizerName::Sgd => Ok(OptimizerSpec::sgd(lr, momentum.unwrap_or(default_momentum))),
    }
}

impl ExperimentConfig {
    /// Reads and resolves a config file. `None` gives the all-default config.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (ConfigFile::parse(&text)?, base)
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        Self::resolve(&file, &base, overrides)
    }

    /// Overrides win over the file; the output directory falls back to `./out`.
    pub fn resolve(file: &ConfigFile, base: &Path, overrides: &Overrides) -> CliResult<Self> {
        let rel = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let source = file.source.unwrap_or(if file.csv.is_some() {
            Source::Csv
        } else {
            Source::Synthetic
        });
        let (data, task) = match source {
            Source::Synthetic => {
                if file.csv.is_some() || file.schema.is_some() {
                    return Err(CliError::config("csv/schema given with source = \"synthetic\""));
                }
                let kind = file.synthetic.unwrap_or(SyntheticKind::Regression);
                let n = file.n.unwrap_or(match kind {
                    SyntheticKind::Regression => 4000,
                    SyntheticKind::NurseryLike => 2000,
                });
                if n == 0 {
                    return Err(CliError::config("n must be positive"));
                }
                if let Some(p) = file.group1_fraction {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(CliError::config(format!("group1_fraction {p} outside (0, 1)")));
                    }
                }
                let task = match kind {
                    SyntheticKind::Regression => Task::Regression,
                    SyntheticKind::NurseryLike => Task::Classification,
                };
                (
                    DataSource::Synthetic {
                        kind,
                        n,
                        group1_fraction: file.group1_fraction,
                    },
                    task,
                )
            }
            Source::Csv => {
                if file.synthetic.is_some() || file.n.is_some() || file.group1_fraction.is_some() {
                    return Err(CliError::config("synthetic keys given with source = \"csv\""));
                }
                let (Some(csv), Some(schema)) = (&file.csv, &file.schema) else {
                    return Err(CliError::config("source = \"csv\" needs both csv and schema"));
                };
                let schema = rel(schema);
                let task = Schema::load(&schema).map_err(CliError::from)?.task;
                (
                    DataSource::Csv {
                        path: rel(csv),
                        schema,
                    },
                    task,
                )
            }
        };

        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let split = SplitSpec {
            train: file.split_train.unwrap_or(0.6),
            holdout: file.split_holdout.unwrap_or(0.2),
            test: file.split_test.unwrap_or(0.2),
            seed,
        };
        split.validate().map_err(CliError::from)?;

        let predictor = match file.model.unwrap_or(ModelFamily::Linear) {
            ModelFamily::Linear => {
                if file.hidden.is_some() || file.dropout.is_some() {
                    return Err(CliError::config("hidden/dropout need model = \"two_layer\""));
                }
                ModelSpec::linear()
            }
            ModelFamily::TwoLayer => {
                ModelSpec::two_layer(file.hidden.unwrap_or(64), file.dropout.unwrap_or(0.5))
            }
        };
        if predictor.hidden.contains(&0) {
            return Err(CliError::config("hidden must be positive"));
        }
        if !(0.0..1.0).contains(&predictor.dropout) {
            return Err(CliError::config(format!("dropout {} outside [0, 1)", predictor.dropout)));
        }
        let discriminator = match file.discriminator_hidden {
            Some(0) => return Err(CliError::config("discriminator_hidden must be positive")),
            Some(w) => ModelSpec::two_layer(w, 0.0),
            None => default_discriminator(task),
        };

        let d = TrainConfig::default_for(task);
        let train = TrainConfig {
            lambda: file.lambda.unwrap_or(d.lambda),
            gamma: file.gamma.unwrap_or(d.gamma),
            outer_iters: file.outer_iters.unwrap_or(d.outer_iters),
            inner_steps: file.inner_steps.unwrap_or(d.inner_steps),
            optimizer_f: optimizer(file.optimizer_f, file.lr_f, file.momentum_f, d.optimizer_f)?,
            optimizer_d: optimizer(file.optimizer_d, file.lr_d, file.momentum_d, d.optimizer_d)?,
            batch: match file.batch_size {
                None => d.batch,
                Some(0) => BatchMode::FullBatch,
                Some(b) => BatchMode::Minibatch(b),
            },
            pretrain_epochs_f: file.pretrain_epochs_f.unwrap_or(d.pretrain_epochs_f),
            pretrain_epochs_d: file.pretrain_epochs_d.unwrap_or(d.pretrain_epochs_d),
            standardize_response: file.standardize_response.unwrap_or(d.standardize_response),
            seed,
        };
        train.validate().map_err(CliError::from)?;

        let t = TestConfig::for_task(task);
        let test = TestConfig {
            resamples: file.test_resamples.unwrap_or(t.resamples),
            model: ModelSpec::two_layer(
                file.test_hidden.unwrap_or(t.model.hidden[0]),
                file.test_dropout.unwrap_or(t.model.dropout),
            ),
            optimizer: OptimizerSpec::sgd(
                file.test_lr.unwrap_or(t.optimizer.lr),
                file.test_momentum.unwrap_or(0.9),
            ),
            epochs: file.test_epochs.unwrap_or(t.epochs),
            batch_size: file.test_batch_size.unwrap_or(t.batch_size),
            seed,
            ..t
        };
        test.validate().map_err(CliError::from)?;

        let alpha = file.alpha.unwrap_or(0.1);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::config(format!("alpha {alpha} outside (0, 1)")));
        }
        let reps = overrides.reps.or(file.reps).unwrap_or(20);
        if reps == 0 {
            return Err(CliError::config("reps must be at least 1"));
        }
        let out_dir = overrides
            .out_dir
            .clone()
            .or_else(|| file.out_dir.as_ref().map(rel))
            .unwrap_or_else(|| PathBuf::from("out"));

        Ok(ExperimentConfig {
            data,
            task,
            include_attribute: file.include_attribute.unwrap_or(false),
            split,
            predictor,
            discriminator,
            train,
            test,
            alpha,
            reps,
            seed,
            baseline: file.baseline.unwrap_or(true),
            out_dir,
        })
    }

    /// Training settings with a different seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// The raw table and schema a synthetic source generates for `seed`.
    pub fn synthetic_table(&self, seed: u64) -> CliResult<(Table, Schema)> {
        let DataSource::Synthetic { kind, n, group1_fraction } = self.data else {
            return Err(CliError::config("source is not synthetic"));
        };
        let out = match kind {
            SyntheticKind::Regression => {
                let d = SyntheticConfig::default();
                fairdummies::data::synthetic_regression_table(&SyntheticConfig {
                    n,
                    seed,
                    group1_fraction: group1_fraction.unwrap_or(d.group1_fraction),
                    ..d
                })
            }
            SyntheticKind::NurseryLike => {
                let d = NurseryLikeConfig::default();
                nursery_like_table(&NurseryLikeConfig {
                    n,
                    seed,
                    group1_fraction: group1_fraction.unwrap_or(d.group1_fraction),
                    ..d
                })
            }
        };
        out.map_err(CliError::from)
    }

    /// The dataset for `seed`. Synthetic sources regenerate per seed; CSV
    /// sources ignore it.
    pub fn dataset(&self, seed: u64) -> CliResult<(Dataset, Option<Schema>)> {
        let options = LoadOptions {
            include_attribute: self.include_attribute,
        };
        match &self.data {
            DataSource::Csv { path, schema } => {
                let schema = Schema::load(schema)?;
                let data = load_csv(path, &schema, options)?;
                Ok((data, Some(schema)))
            }
            DataSource::Synthetic {
                kind: SyntheticKind::Regression,
                n,
                group1_fraction,
            } if !self.include_attribute => {
                let d = SyntheticConfig::default();
                let data = generate_synthetic(&SyntheticConfig {
                    n: *n,
                    seed,
                    group1_fraction: group1_fraction.unwrap_or(d.group1_fraction),
                    ..d
                })?;
                Ok((data, None))
            }
            DataSource::Synthetic { .. } => {
                // go through the text form so encodings match the CSV path
                let (table, schema) = self.synthetic_table(seed)?;
                let mut buf = Vec::new();
                write_table(&table, &mut buf)?;
                let data = load_csv_from_reader(buf.as_slice(), &schema, options)?;
                Ok((data, Some(schema)))
            }
        }
    }
}
