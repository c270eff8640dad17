//! The five subcommands. Each writes its outputs under the configured
//! output directory and returns what it wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fairdummies::checkpoint::Checkpoint;
use fairdummies::conformal::{summarize, ConformalCalibrator, GroupSummary};
use fairdummies::data::{write_table, Dataset};
use fairdummies::fairtest::{TestConfig, TestReport};
use fairdummies::fairtrain::{fit_fair, write_trace, FairModel};
use fairdummies::Error;
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    holdout_calibration, holdout_test, labels, prediction_error, prepare, run_repetition, test_seed,
    training_seed, write_records, write_summary, MetricsRecord, Prepared,
};

pub const DATA_FILE: &str = "data.csv";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TEST_REPORT_FILE: &str = "test_report.json";
pub const SETS_FILE: &str = "conformal_sets.csv";
pub const CONFORMAL_SUMMARY_FILE: &str = "conformal_summary.csv";
pub const CALIBRATOR_FILE: &str = "conformal_calibrator.json";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const BENCHMARK_SUMMARY_FILE: &str = "benchmark_summary.csv";
pub const BENCHMARK_RUNTIMES_FILE: &str = "benchmark_runtimes.csv";

fn out_path(config: &ExperimentConfig, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(&config.out_dir)?;
    Ok(config.out_dir.join(name))
}

/// Writes the synthetic source as `data.csv` plus `schema.toml`.
pub fn synth(config: &ExperimentConfig) -> CliResult<[PathBuf; 2]> {
    if !matches!(config.data, DataSource::Synthetic { .. }) {
        return Err(CliError::config("synth needs source = \"synthetic\""));
    }
    let (table, schema) = config.synthetic_table(config.seed)?;
    let data = out_path(config, DATA_FILE)?;
    let mut file = fs::File::create(&data)?;
    write_table(&table, &mut file)?;
    file.flush()?;
    let schema_path = out_path(config, SCHEMA_FILE)?;
    fs::write(&schema_path, schema.to_toml()?)?;
    Ok([data, schema_path])
}

/// The dataset and split used by `train`, `test` and `conformal`;
/// the same as repetition 0 of a benchmark.
fn single_split(config: &ExperimentConfig) -> CliResult<(Dataset, Option<fairdummies::data::Schema>, Prepared)> {
    let (data, schema) = config.dataset(config.seed)?;
    let prep = prepare(&data, config.seed, config)?;
    Ok((data, schema, prep))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: FairModel,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub error: f64,
    pub group_error: [f64; 2],
}

/// Fits the fair model and writes the checkpoint, the trace and one
/// appended row of `metrics.csv`. A diverging fit still writes its trace.
pub fn train(config: &ExperimentConfig) -> CliResult<TrainOutcome> {
    let (data, schema, prep) = single_split(config)?;
    let train_config = config.train_config(training_seed(config.seed));
    let trace_path = out_path(config, TRACE_FILE)?;
    let model = match fit_fair(&prep.train, &prep.sampler, &config.predictor, &config.discriminator, &train_config) {
        Ok(m) => m,
        Err(e) => {
            if let Error::Divergence { trace, .. } = &e {
                write_trace(trace, fs::File::create(&trace_path)?)?;
            }
            return Err(e.into());
        }
    };
    write_trace(&model.trace, fs::File::create(&trace_path)?)?;

    let mut ck = Checkpoint::new(&model, &config.predictor, Some(prep.standardizer.clone()));
    ck.feature_names = data.feature_names.clone();
    ck.class_names = data.class_names.clone();
    ck.schema = schema;
    let ck_path = out_path(config, CHECKPOINT_FILE)?;
    ck.save(&ck_path)?;

    let pred = model.predict(&prep.test.x.view())?;
    let (group_error, error) = prediction_error(&pred.view(), &prep.test.a, &prep.test.y);
    append_metrics(config, &train_config.lambda, error, group_error)?;
    Ok(TrainOutcome {
        model,
        checkpoint: ck_path,
        trace: trace_path,
        error,
        group_error,
    })
}

fn append_metrics(config: &ExperimentConfig, lambda: &f64, error: f64, group: [f64; 2]) -> CliResult<()> {
    let path = out_path(config, METRICS_FILE)?;
    let fresh = !path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = csv::Writer::from_writer(file);
    let name = match config.task {
        fairdummies::data::Task::Regression => "rmse",
        fairdummies::data::Task::Classification => "misclassification",
    };
    if fresh {
        w.write_record(["seed", "lambda", name, &format!("{name}_g0"), &format!("{name}_g1")])?;
    }
    w.write_record([
        config.seed.to_string(),
        lambda.to_string(),
        error.to_string(),
        group[0].to_string(),
        group[1].to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint and checks it was trained on data shaped like the
/// configured source.
fn load_checkpoint(path: &Path, config: &ExperimentConfig, data: &Dataset) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::data(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other.into(),
    })?;
    if ck.task != config.task {
        return Err(CliError::data(format!(
            "checkpoint is for {:?} but the data is {:?}",
            ck.task, config.task
        )));
    }
    if ck.feature_names != data.feature_names {
        return Err(CliError::data(format!(
            "checkpoint features {:?} do not match data features {:?}",
            ck.feature_names, data.feature_names
        )));
    }
    Ok(ck)
}

/// Holdout and test predictions from a checkpoint. The raw rows go through
/// the checkpoint's own preprocessing.
fn checkpoint_predictions(ck: &Checkpoint, data: &Dataset, prep: &Prepared) -> CliResult<(Array2<f64>, Array2<f64>)> {
    Ok((
        ck.predict(&data.subset(&prep.holdout_rows).x.view())?,
        ck.predict(&data.subset(&prep.test_rows).x.view())?,
    ))
}

/// Fair dummies test of a checkpoint: `r̂` on the holdout rows, statistic on
/// the test rows, dummies from the checkpoint's sampler.
pub fn test(config: &ExperimentConfig, checkpoint: &Path) -> CliResult<(TestReport, PathBuf)> {
    let (data, _, prep) = single_split(config)?;
    let ck = load_checkpoint(checkpoint, config, &data)?;
    let (holdout, test) = checkpoint_predictions(&ck, &data, &prep)?;
    let test_config = TestConfig {
        seed: test_seed(config.seed),
        ..config.test.clone()
    };
    let report = holdout_test(holdout, test, &prep, &ck.sampler, &test_config)?;
    let path = out_path(config, TEST_REPORT_FILE)?;
    fs::write(&path, report.to_json()?)?;
    Ok((report, path))
}

#[derive(Debug)]
pub struct ConformalOutcome {
    pub calibrator: ConformalCalibrator,
    pub summary: Vec<GroupSummary>,
    pub sets: PathBuf,
    pub summary_path: PathBuf,
}

/// Calibrates on the holdout rows and writes one prediction set per test row.
pub fn conformal(config: &ExperimentConfig, checkpoint: &Path) -> CliResult<ConformalOutcome> {
    let (data, _, prep) = single_split(config)?;
    labels(&data.y)?;
    let ck = load_checkpoint(checkpoint, config, &data)?;
    let (holdout, test) = checkpoint_predictions(&ck, &data, &prep)?;
    let calibrator = holdout_calibration(&holdout.view(), &prep, config.alpha)?;
    let sets = calibrator.predict_sets(&test.view(), &prep.test.a)?;
    let test_labels = labels(&prep.test.y)?;
    let summary = summarize(&sets, &prep.test.a, test_labels)?;

    let sets_path = out_path(config, SETS_FILE)?;
    let mut w = csv::Writer::from_path(&sets_path)?;
    w.write_record(["row", "group", "label", "set"])?;
    for (i, set) in sets.iter().enumerate() {
        let joined: Vec<String> = set.iter().map(|l| l.to_string()).collect();
        w.write_record([
            prep.test_rows[i].to_string(),
            prep.test.a[i].to_string(),
            test_labels[i].to_string(),
            joined.join(";"),
        ])?;
    }
    w.flush()?;

    let summary_path = out_path(config, CONFORMAL_SUMMARY_FILE)?;
    let mut w = csv::Writer::from_path(&summary_path)?;
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;
    fs::write(out_path(config, CALIBRATOR_FILE)?, serde_json::to_string_pretty(&calibrator)?)?;
    Ok(ConformalOutcome {
        calibrator,
        summary,
        sets: sets_path,
        summary_path,
    })
}

/// Runs `config.reps` repetitions on `jobs` worker threads. Rows come back
/// in repetition order whatever the completion order.
pub fn run_benchmark(config: &ExperimentConfig, jobs: usize) -> CliResult<Vec<MetricsRecord>> {
    let fixed = match config.data {
        DataSource::Csv { .. } => Some(config.dataset(config.seed)?.0),
        DataSource::Synthetic { .. } => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let results: Vec<CliResult<MetricsRecord>> = pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|r| {
                let rec = run_repetition(config, r, fixed.as_ref());
                if let Ok(rec) = &rec {
                    eprintln!(
                        "rep {r}: fair p = {:.3}{}",
                        rec.fair.p_value,
                        rec.baseline.as_ref().map(|b| format!(", baseline p = {:.3}", b.p_value)).unwrap_or_default()
                    );
                }
                rec
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Benchmark plus its three files: the metric table, quantile summary and runtimes.
pub fn benchmark(config: &ExperimentConfig, jobs: usize) -> CliResult<(Vec<MetricsRecord>, [PathBuf; 3])> {
    let records = run_benchmark(config, jobs)?;
    let table = out_path(config, BENCHMARK_FILE)?;
    write_records(&records, fs::File::create(&table)?, false)?;
    let summary = out_path(config, BENCHMARK_SUMMARY_FILE)?;
    write_summary(&records, fs::File::create(&summary)?)?;
    let runtimes = out_path(config, BENCHMARK_RUNTIMES_FILE)?;
    write_records(&records, fs::File::create(&runtimes)?, true)?;
    Ok((records, [table, summary, runtimes]))
}
