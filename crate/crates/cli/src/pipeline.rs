//! One repetition of the experiment: split, standardize, fit the sampler,
//! fit the fair and baseline models, then score each on the test rows.
//!
//! Seeds inside repetition `r` of a run with base seed `s`:
//!
//! - repetition seed `s ^ r` (synthetic data, split);
//! - training seed `mix_seed(s ^ r, 1)`, shared by the fair and baseline fits;
//! - test seed `mix_seed(s ^ r, 2)`.
//!
//! Any single repetition can therefore be rerun on its own.

use std::time::Instant;

use fairdummies::conformal::{calibrate, summarize, ConformalCalibrator};
use fairdummies::data::{split_indices, Dataset, Response, Standardizer, Task};
use fairdummies::dummies::{fit_sampler, DummySampler, SamplerConfig};
use fairdummies::fairtest::{run_test_split, TestConfig, TestReport, Triples};
use fairdummies::fairtrain::{fit_fair, FairModel, TrainConfig};
use fairdummies::rng::mix_seed;
use ndarray::{Array2, ArrayView2};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub fn repetition_seed(base: u64, rep: usize) -> u64 {
    base ^ rep as u64
}

pub fn training_seed(rep_seed: u64) -> u64 {
    mix_seed(rep_seed, 1)
}

pub fn test_seed(rep_seed: u64) -> u64 {
    mix_seed(rep_seed, 2)
}

/// Split parts with model-ready features and the fitted preprocessing.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub holdout: Dataset,
    pub test: Dataset,
    /// Row numbers of the holdout and test parts in the source dataset.
    pub holdout_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub standardizer: Standardizer,
    pub sampler: DummySampler,
}

pub fn prepare(data: &Dataset, split_seed: u64, config: &ExperimentConfig) -> CliResult<Prepared> {
    let spec = fairdummies::data::SplitSpec {
        seed: split_seed,
        ..config.split
    };
    let idx = split_indices(data.len(), &spec)?;
    let raw_train = data.subset(&idx.train);
    let (standardizer, x) = Standardizer::fit_transform(&raw_train.x.view());
    let scaled = |rows: &[usize]| -> CliResult<Dataset> {
        let part = data.subset(rows);
        Ok(Dataset {
            x: standardizer.apply(&part.x.view())?,
            ..part
        })
    };
    let holdout = scaled(&idx.holdout)?;
    let test = scaled(&idx.test)?;
    let train = Dataset { x, ..raw_train };
    let sampler = fit_sampler(&train.a, &train.y, &SamplerConfig::default())?;
    Ok(Prepared {
        train,
        holdout,
        test,
        holdout_rows: idx.holdout,
        test_rows: idx.test,
        standardizer,
        sampler,
    })
}

/// Scores for one fitted model on the test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    /// RMSE (regression) or misclassification rate (classification).
    pub error: f64,
    pub group_error: [f64; 2],
    pub p_value: f64,
    /// Classification only.
    pub coverage: Option<[f64; 2]>,
    pub set_size: Option<[f64; 2]>,
    pub train_seconds: f64,
    pub test_seconds: f64,
}

/// Overall and per-group RMSE or misclassification rate.
pub fn prediction_error(pred: &ArrayView2<f64>, a: &[u8], y: &Response) -> ([f64; 2], f64) {
    let mut loss = [0.0; 2];
    let mut count = [0usize; 2];
    for (i, &g) in a.iter().enumerate() {
        let g = usize::from(g.min(1));
        loss[g] += match y {
            Response::Continuous(v) => (v[i] - pred[[i, 0]]).powi(2),
            Response::Classes { labels, .. } => f64::from(u8::from(argmax(&pred.row(i).to_vec()) != labels[i])),
        };
        count[g] += 1;
    }
    let finish = |l: f64, c: usize| {
        let m = if c == 0 { f64::NAN } else { l / c as f64 };
        match y {
            Response::Continuous(_) => m.sqrt(),
            Response::Classes { .. } => m,
        }
    };
    (
        [finish(loss[0], count[0]), finish(loss[1], count[1])],
        finish(loss[0] + loss[1], count[0] + count[1]),
    )
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

pub fn labels(y: &Response) -> CliResult<&[usize]> {
    match y {
        Response::Classes { labels, .. } => Ok(labels),
        Response::Continuous(_) => Err(CliError::config("conformal sets need a classification task")),
    }
}

/// Fair dummies test with `r̂` fitted on the holdout and evaluated on the test rows.
pub fn holdout_test(
    holdout_pred: Array2<f64>,
    test_pred: Array2<f64>,
    prep: &Prepared,
    sampler: &DummySampler,
    config: &TestConfig,
) -> CliResult<TestReport> {
    let fit = Triples::new(holdout_pred, prep.holdout.a.clone(), prep.holdout.y.clone())?;
    let eval = Triples::new(test_pred, prep.test.a.clone(), prep.test.y.clone())?;
    Ok(run_test_split(&fit, &eval, sampler, config)?)
}

/// Group-conditional thresholds from the holdout rows.
pub fn holdout_calibration(holdout_pred: &ArrayView2<f64>, prep: &Prepared, alpha: f64) -> CliResult<ConformalCalibrator> {
    Ok(calibrate(holdout_pred, &prep.holdout.a, labels(&prep.holdout.y)?, alpha)?)
}

pub fn evaluate(
    model: &FairModel,
    prep: &Prepared,
    test_config: &TestConfig,
    alpha: f64,
    train_seconds: f64,
) -> CliResult<ModelMetrics> {
    let start = Instant::now();
    let holdout_pred = model.predict(&prep.holdout.x.view())?;
    let test_pred = model.predict(&prep.test.x.view())?;
    let (group_error, error) = prediction_error(&test_pred.view(), &prep.test.a, &prep.test.y);
    let (coverage, set_size) = match model.task {
        Task::Regression => (None, None),
        Task::Classification => {
            let cal = holdout_calibration(&holdout_pred.view(), prep, alpha)?;
            let sets = cal.predict_sets(&test_pred.view(), &prep.test.a)?;
            let summary = summarize(&sets, &prep.test.a, labels(&prep.test.y)?)?;
            let mut cov = [f64::NAN; 2];
            let mut size = [f64::NAN; 2];
            for s in summary {
                cov[usize::from(s.group)] = s.coverage;
                size[usize::from(s.group)] = s.mean_size;
            }
            (Some(cov), Some(size))
        }
    };
    let report = holdout_test(holdout_pred, test_pred, prep, &model.sampler, test_config)?;
    Ok(ModelMetrics {
        error,
        group_error,
        p_value: report.p_value,
        coverage,
        set_size,
        train_seconds,
        test_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub rep: usize,
    pub seed: u64,
    pub task: Task,
    pub fair: ModelMetrics,
    pub baseline: Option<ModelMetrics>,
}

fn error_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "rmse",
        Task::Classification => "misclassification",
    }
}

impl MetricsRecord {
    /// Named metric columns, excluding runtimes.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let err = error_name(self.task);
        let mut push = |prefix: &str, m: &ModelMetrics| {
            out.push((format!("{prefix}_{err}"), m.error));
            out.push((format!("{prefix}_{err}_g0"), m.group_error[0]));
            out.push((format!("{prefix}_{err}_g1"), m.group_error[1]));
            out.push((format!("{prefix}_p_value"), m.p_value));
            if let (Some(c), Some(s)) = (m.coverage, m.set_size) {
                out.push((format!("{prefix}_coverage_g0"), c[0]));
                out.push((format!("{prefix}_coverage_g1"), c[1]));
                out.push((format!("{prefix}_set_size_g0"), s[0]));
                out.push((format!("{prefix}_set_size_g1"), s[1]));
            }
        };
        push("fair", &self.fair);
        if let Some(b) = &self.baseline {
            push("baseline", b);
        }
        out
    }

    pub fn runtimes(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("fair_train_seconds".to_string(), self.fair.train_seconds),
            ("fair_test_seconds".to_string(), self.fair.test_seconds),
        ];
        if let Some(b) = &self.baseline {
            out.push(("baseline_train_seconds".into(), b.train_seconds));
            out.push(("baseline_test_seconds".into(), b.test_seconds));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.columns().iter().chain(self.runtimes().iter()).all(|(_, v)| v.is_finite())
    }

    /// Looks up a metric column by name.
    pub fn get(&self, column: &str) -> Option<f64> {
        self.columns().into_iter().find(|(c, _)| c == column).map(|(_, v)| v)
    }
}

fn fit_timed(prep: &Prepared, config: &ExperimentConfig, train: &TrainConfig) -> CliResult<(FairModel, f64)> {
    let start = Instant::now();
    let model = fit_fair(&prep.train, &prep.sampler, &config.predictor, &config.discriminator, train)?;
    Ok((model, start.elapsed().as_secs_f64()))
}

/// Runs repetition `rep`. `fixed` is the dataset for CSV sources; synthetic
/// sources are regenerated from the repetition seed.
pub fn run_repetition(config: &ExperimentConfig, rep: usize, fixed: Option<&Dataset>) -> CliResult<MetricsRecord> {
    let seed = repetition_seed(config.seed, rep);
    let owned;
    let data = match fixed {
        Some(d) => d,
        None => {
            owned = config.dataset(seed)?.0;
            &owned
        }
    };
    let prep = prepare(data, seed, config)?;
    let test = TestConfig {
        seed: test_seed(seed),
        ..config.test.clone()
    };
    let train = config.train_config(training_seed(seed));
    let (model, secs) = fit_timed(&prep, config, &train)?;
    let fair = evaluate(&model, &prep, &test, config.alpha, secs)?;
    let baseline = if config.baseline {
        let erm = TrainConfig { lambda: 0.0, ..train };
        let (model, secs) = fit_timed(&prep, config, &erm)?;
        Some(evaluate(&model, &prep, &test, config.alpha, secs)?)
    } else {
        None
    };
    let record = MetricsRecord {
        rep,
        seed,
        task: config.task,
        fair,
        baseline,
    };
    if !record.is_finite() {
        return Err(CliError {
            class: fairdummies::ErrorClass::Numerical,
            message: format!("repetition {rep} produced non-finite metrics"),
        });
    }
    Ok(record)
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const SUMMARY_HEADER: [&str; 7] = ["metric", "min", "q25", "median", "q75", "max", "mean"];

/// Per-column quantiles across repetitions.
pub fn summary_rows(records: &[MetricsRecord]) -> Vec<(String, [f64; 6])> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    first
        .columns()
        .iter()
        .enumerate()
        .map(|(j, (name, _))| {
            let mut v: Vec<f64> = records.iter().map(|r| r.columns()[j].1).collect();
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (
                name.clone(),
                [v[0], quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75), v[v.len() - 1], mean],
            )
        })
        .collect()
}

pub fn write_records<W: std::io::Write>(records: &[MetricsRecord], writer: W, runtimes: bool) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let cols = |r: &MetricsRecord| if runtimes { r.runtimes() } else { r.columns() };
    if let Some(first) = records.first() {
        let mut header = vec!["rep".to_string(), "seed".to_string()];
        header.extend(cols(first).into_iter().map(|(c, _)| c));
        w.write_record(&header)?;
    }
    for r in records {
        let mut row = vec![r.rep.to_string(), r.seed.to_string()];
        row.extend(cols(r).into_iter().map(|(_, v)| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: std::io::Write>(records: &[MetricsRecord], writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for (name, stats) in summary_rows(records) {
        let mut row = vec![name];
        row.extend(stats.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
