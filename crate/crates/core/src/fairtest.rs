//! Holdout randomization test for `H₀: Ŷ ⫫ A | Y` on a fixed prediction
//! rule.
//!
//! A statistic model `r̂(a, y)` is fitted on one part of the test rows to
//! predict `Ŷ`. On the other part the mean statistic with the real attribute
//! is compared against `K` copies computed with resampled fair dummies:
//!
//! ```text
//! p = (1 + #{k : t* ≤ t⁽ᵏ⁾}) / (K + 1)
//! ```
//!
//! where larger statistics are stronger evidence. The per-row statistics
//! here are losses of `r̂`, which shrink when `r̂` sees the real attribute,
//! so the formula is applied to negated mean losses: the p-value counts the
//! resampled losses at or below the observed one.
//!
//! Under `H₀` with dummies drawn from the exact `P(A | Y)` the real and
//! dummy triples are exchangeable, so `p` is a valid p-value.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Response, ResponseScaler, Task};
use crate::dummies::{sample_dummies, AttributePosterior};
use crate::error::{Error, Result};
use crate::fairtrain::ModelSpec;
use crate::nn::{train_erm, Activation, BatchMode, DiffModel, Loss, Mode, OptimizerSpec, DEFAULT_CLIP};
use crate::rng::{mix_seed, stream_rng};

/// Below this many evaluation rows the report carries a warning.
pub const MIN_EVALUATION_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    RegressionSquaredError,
    ClassificationCrossEntropy,
}

impl StatisticKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => StatisticKind::RegressionSquaredError,
            Task::Classification => StatisticKind::ClassificationCrossEntropy,
        }
    }

    pub fn task(self) -> Task {
        match self {
            StatisticKind::RegressionSquaredError => Task::Regression,
            StatisticKind::ClassificationCrossEntropy => Task::Classification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Number of dummy resamplings `K`.
    pub resamples: usize,
    /// Fraction of rows used to fit `r̂` when no holdout is given.
    pub split_fraction: f64,
    pub statistic: StatisticKind,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TestConfig {
    pub fn for_task(task: Task) -> Self {
        TestConfig {
            resamples: 100,
            split_fraction: 0.5,
            statistic: StatisticKind::for_task(task),
            model: ModelSpec::two_layer(64, 0.5),
            optimizer: OptimizerSpec::sgd(0.01, 0.9),
            epochs: 200,
            batch_size: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::Config("the test needs at least one resampling".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("statistic batch size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub p_value: f64,
    /// Mean loss of `r̂` on `I₂` with the real attribute.
    pub t_star: f64,
    /// Mean losses with each resampled dummy vector.
    pub t_resampled: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    /// `[|I₁|, |I₂|]`.
    pub split_sizes: [usize; 2],
    pub seed: u64,
    pub statistic_kind: StatisticKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl TestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Predictions, attribute and response for a set of rows. Regression
/// predictions are `n × 1`; classification predictions are `n × L` class
/// probabilities.
#[derive(Debug, Clone)]
pub struct Triples {
    pub yhat: Array2<f64>,
    pub a: Vec<u8>,
    pub y: Response,
}

impl Triples {
    pub fn new(yhat: Array2<f64>, a: Vec<u8>, y: Response) -> Result<Self> {
        let n = y.len();
        if yhat.nrows() != n || a.len() != n {
            return Err(Error::shape(
                format!("{n} rows"),
                format!("yhat: {}, a: {}", yhat.nrows(), a.len()),
            ));
        }
        match &y {
            Response::Continuous(_) if yhat.ncols() != 1 => {
                return Err(Error::shape("1 prediction column", yhat.ncols()))
            }
            Response::Classes { n_classes, .. } if yhat.ncols() != *n_classes => {
                return Err(Error::shape(format!("{n_classes} probability columns"), yhat.ncols()))
            }
            _ => {}
        }
        Ok(Triples { yhat, a, y })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Triples {
        Triples {
            yhat: self.yhat.select(ndarray::Axis(0), idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: self.y.subset(idx),
        }
    }

    /// The scalar the statistic model predicts: `Ŷ` or `Ŷ^Y`.
    fn scalar_prediction(&self) -> Vec<f64> {
        match &self.y {
            Response::Continuous(_) => self.yhat.column(0).to_vec(),
            Response::Classes { labels, .. } => labels
                .iter()
                .enumerate()
                .map(|(i, &l)| self.yhat[[i, l]])
                .collect(),
        }
    }
}

/// Per-row statistic. For classification `prediction` is `Ŷ^Y` and
/// `r_out` is clipped before the logs.
pub fn statistic(kind: StatisticKind, prediction: f64, r_out: f64) -> f64 {
    match kind {
        StatisticKind::RegressionSquaredError => (prediction - r_out).powi(2),
        StatisticKind::ClassificationCrossEntropy => {
            let r = r_out.clamp(DEFAULT_CLIP, 1.0 - DEFAULT_CLIP);
            -prediction * r.ln() - (1.0 - prediction) * (1.0 - r).ln()
        }
    }
}

/// `(1 + #{k : t* ≤ t⁽ᵏ⁾}) / (K + 1)`.
pub fn p_value(t_star: f64, t_resampled: &[f64]) -> f64 {
    let exceed = t_resampled.iter().filter(|&&t| t_star <= t).count();
    (1 + exceed) as f64 / (t_resampled.len() + 1) as f64
}

/// Fitted `r̂` with the scalings it was trained under.
#[derive(Debug, Clone)]
pub struct StatisticModel {
    pub model: DiffModel,
    pub kind: StatisticKind,
    /// Scaling of the response input (regression only).
    pub y_scaler: ResponseScaler,
    /// Scaling of the regression target `Ŷ`.
    pub target_scaler: ResponseScaler,
}

impl StatisticModel {
    fn inputs(&self, a: &[f64], y: &Response) -> Array2<f64> {
        statistic_inputs(a, y, &self.y_scaler)
    }

    /// `r̂(a, y)` on the original prediction scale.
    pub fn predict(&self, a: &[f64], y: &Response) -> Result<Vec<f64>> {
        let out = self.model.forward(&self.inputs(a, y).view())?;
        let s = self.target_scaler;
        Ok(out.column(0).iter().map(|&v| s.inverse(v)).collect())
    }

    /// Mean statistic over rows with attribute values `a`.
    pub fn mean_statistic(&self, prediction: &[f64], a: &[f64], y: &Response) -> Result<f64> {
        let r = self.predict(a, y)?;
        let total: f64 = prediction
            .iter()
            .zip(&r)
            .map(|(&p, &ri)| statistic(self.kind, p, ri))
            .sum();
        Ok(total / prediction.len() as f64)
    }
}

fn statistic_inputs(a: &[f64], y: &Response, y_scaler: &ResponseScaler) -> Array2<f64> {
    let mut code = y.encoded();
    if let Response::Continuous(_) = y {
        code.mapv_inplace(|v| y_scaler.forward(v));
    }
    let mut x = Array2::zeros((a.len(), 1 + code.ncols()));
    x.column_mut(0).assign(&ArrayView2::from_shape((a.len(), 1), a).expect("column").column(0));
    x.slice_mut(ndarray::s![.., 1..]).assign(&code);
    x
}

/// Fits `r̂` on `I₁` to predict `Ŷ` (or `Ŷ^Y`) from `(A, Y)`.
pub fn fit_statistic_model(fit_rows: &Triples, config: &TestConfig) -> Result<StatisticModel> {
    config.validate()?;
    if fit_rows.is_empty() {
        return Err(Error::Split("no rows to fit the test statistic".into()));
    }
    let kind = config.statistic;
    if fit_rows.y.task() != kind.task() {
        return Err(Error::Config(format!("{kind:?} does not match a {:?} response", fit_rows.y.task())));
    }
    let prediction = fit_rows.scalar_prediction();
    let (y_scaler, target_scaler, head, loss) = match &fit_rows.y {
        Response::Continuous(y) => (
            ResponseScaler::fit(y),
            ResponseScaler::fit(&prediction),
            Activation::Identity,
            Loss::mse(),
        ),
        Response::Classes { .. } => (
            ResponseScaler::identity(),
            ResponseScaler::identity(),
            Activation::Sigmoid,
            Loss::binary_cross_entropy(),
        ),
    };
    let a: Vec<f64> = fit_rows.a.iter().map(|&v| f64::from(v)).collect();
    let x = statistic_inputs(&a, &fit_rows.y, &y_scaler);
    let target = Array2::from_shape_vec(
        (prediction.len(), 1),
        prediction.iter().map(|&v| target_scaler.forward(v)).collect(),
    )
    .expect("column");
    let mut rng = stream_rng(config.seed, 1);
    let mut model = config.model.build(x.ncols(), 1, head, &mut rng)?;
    let mut optimizer = config.optimizer.build()?;
    train_erm(
        &mut model,
        &loss,
        &x.view(),
        &target.view(),
        BatchMode::Minibatch(config.batch_size),
        &mut optimizer,
        config.epochs,
        &mut rng,
    )?;
    model.set_mode(Mode::Eval);
    Ok(StatisticModel {
        model,
        kind,
        y_scaler,
        target_scaler,
    })
}

/// Runs the test with a seeded split of `rows` into `I₁` and `I₂`.
pub fn run_test<P: AttributePosterior + ?Sized>(
    rows: &Triples,
    posterior: &P,
    config: &TestConfig,
) -> Result<TestReport> {
    config.validate()?;
    let n = rows.len();
    let n_fit = (n as f64 * config.split_fraction).round() as usize;
    if n_fit == 0 || n_fit >= n {
        return Err(Error::Split(format!(
            "split fraction {} leaves an empty part for {n} rows",
            config.split_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(config.seed, 0));
    let eval = idx.split_off(n_fit);
    run_test_split(&rows.subset(&idx), &rows.subset(&eval), posterior, config)
}

/// Runs the test with `I₁ = fit_rows` and `I₂ = eval_rows`.
pub fn run_test_split<P: AttributePosterior + ?Sized>(
    fit_rows: &Triples,
    eval_rows: &Triples,
    posterior: &P,
    config: &TestConfig,
) -> Result<TestReport> {
    if eval_rows.is_empty() {
        return Err(Error::Split("no rows to evaluate the test statistic".into()));
    }
    let r_hat = fit_statistic_model(fit_rows, config)?;
    let prediction = eval_rows.scalar_prediction();
    let a: Vec<f64> = eval_rows.a.iter().map(|&v| f64::from(v)).collect();
    let t_star = r_hat.mean_statistic(&prediction, &a, &eval_rows.y)?;
    let dummy_seed = mix_seed(config.seed, 2);
    let t_resampled = (0..config.resamples)
        .map(|k| {
            let mut rng = stream_rng(dummy_seed, k as u64);
            let dummies: Vec<f64> = sample_dummies(posterior, &eval_rows.y, &mut rng)
                .into_iter()
                .map(f64::from)
                .collect();
            r_hat.mean_statistic(&prediction, &dummies, &eval_rows.y)
        })
        .collect::<Result<Vec<f64>>>()?;
    if !t_star.is_finite() || t_resampled.iter().any(|t| !t.is_finite()) {
        return Err(Error::divergence("test statistic is not finite"));
    }
    let warning = (eval_rows.len() < MIN_EVALUATION_ROWS).then(|| {
        format!(
            "only {} evaluation rows; the test is underpowered",
            eval_rows.len()
        )
    });
    let evidence: Vec<f64> = t_resampled.iter().map(|t| -t).collect();
    Ok(TestReport {
        p_value: p_value(-t_star, &evidence),
        t_star,
        t_resampled,
        k: config.resamples,
        split_sizes: [fit_rows.len(), eval_rows.len()],
        seed: config.seed,
        statistic_kind: config.statistic,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ResponseValue;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn p_value_edge_cases() {
        let below = vec![0.5; 99];
        assert_eq!(p_value(1.0, &below), 0.01);
        let above = vec![2.0; 99];
        assert_eq!(p_value(1.0, &above), 1.0);
        // ties count toward the numerator
        assert_eq!(p_value(1.0, &[1.0, 0.0, 0.0]), 0.5);
    }

    proptest! {
        #[test]
        fn p_value_within_bounds(t in -5.0f64..5.0, ts in prop::collection::vec(-5.0f64..5.0, 1..200)) {
            let p = p_value(t, &ts);
            prop_assert!(p >= 1.0 / (ts.len() + 1) as f64 && p <= 1.0);
        }
    }

    #[test]
    fn statistic_values() {
        assert_eq!(statistic(StatisticKind::RegressionSquaredError, 1.5, 1.5), 0.0);
        assert_eq!(statistic(StatisticKind::RegressionSquaredError, 2.0, 0.0), 4.0);
        let v = statistic(StatisticKind::ClassificationCrossEntropy, 0.5, 0.5);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(statistic(StatisticKind::ClassificationCrossEntropy, 1.0, 0.0).is_finite());
    }

    fn regression_rows(n: usize, seed: u64, yhat: impl Fn(u8, f64, f64) -> f64) -> Triples {
        let mut rng = stream_rng(seed, 9);
        let mut a = Vec::new();
        let mut y = Vec::new();
        let mut p = Vec::new();
        for _ in 0..n {
            let ai = u8::from(rng.random::<f64>() < 0.5);
            let yi: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            a.push(ai);
            y.push(yi);
            p.push(yhat(ai, yi, e));
        }
        Triples::new(Array2::from_shape_vec((n, 1), p).unwrap(), a, Response::Continuous(y)).unwrap()
    }

    fn quick(task: Task) -> TestConfig {
        TestConfig {
            epochs: 60,
            resamples: 50,
            ..TestConfig::for_task(task)
        }
    }

    #[test]
    fn constant_prediction_learned() {
        let rows = regression_rows(1000, 1, |_, _, _| 2.5);
        let m = fit_statistic_model(&rows, &TestConfig::for_task(Task::Regression)).unwrap();
        let a: Vec<f64> = rows.a.iter().map(|&v| f64::from(v)).collect();
        for r in m.predict(&a, &rows.y).unwrap() {
            assert!((r - 2.5).abs() <= 1e-2, "{r}");
        }
    }

    #[test]
    fn attribute_signal_memorized() {
        let rows = regression_rows(400, 2, |a, _, _| f64::from(a));
        let cfg = TestConfig {
            model: ModelSpec::two_layer(64, 0.0),
            ..quick(Task::Regression)
        };
        let m = fit_statistic_model(&rows, &cfg).unwrap();
        let a: Vec<f64> = rows.a.iter().map(|&v| f64::from(v)).collect();
        let t = m.mean_statistic(&rows.scalar_prediction(), &a, &rows.y).unwrap();
        assert!(t <= 0.01, "held-in mse {t}");
    }

    #[test]
    fn soft_half_target_learned() {
        let n = 200;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let yhat = Array2::from_elem((n, 3), 0.5);
        let rows = Triples::new(yhat, a, Response::Classes { labels, n_classes: 3 }).unwrap();
        let m = fit_statistic_model(&rows, &quick(Task::Classification)).unwrap();
        let af: Vec<f64> = rows.a.iter().map(|&v| f64::from(v)).collect();
        for r in m.predict(&af, &rows.y).unwrap() {
            assert!((r - 0.5).abs() <= 0.02, "{r}");
        }
    }

    #[test]
    fn dependent_predictions_rejected_and_independent_not() {
        let half = |_: ResponseValue| 0.5;
        let unfair = regression_rows(600, 3, |a, y, e| y + 2.0 * f64::from(a) + 0.3 * e);
        let r = run_test(&unfair, &half, &quick(Task::Regression)).unwrap();
        assert!(r.p_value <= 0.05, "p = {}", r.p_value);
        assert!(r.t_resampled.iter().filter(|&&t| t <= r.t_star).count() <= 1);
        let fair = regression_rows(600, 4, |_, y, e| y + 0.3 * e);
        let r = run_test(&fair, &half, &quick(Task::Regression)).unwrap();
        assert!(r.p_value > 0.01, "p = {}", r.p_value);
    }

    #[test]
    fn report_deterministic_and_serializable() {
        let half = |_: ResponseValue| 0.5;
        let rows = regression_rows(100, 5, |a, y, _| y + f64::from(a));
        let cfg = quick(Task::Regression);
        let r1 = run_test(&rows, &half, &cfg).unwrap();
        let r2 = run_test(&rows, &half, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.split_sizes, [50, 50]);
        assert_eq!(r1.t_resampled.len(), 50);
        let json = r1.to_json().unwrap();
        for key in ["p_value", "t_star", "t_resampled", "\"K\"", "split_sizes", "seed", "statistic_kind"] {
            assert!(json.contains(key), "{key}");
        }
        let back: TestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r1);
    }

    #[test]
    fn small_evaluation_split_warns() {
        let half = |_: ResponseValue| 0.5;
        let rows = regression_rows(16, 6, |_, y, _| y);
        let r = run_test(&rows, &half, &quick(Task::Regression)).unwrap();
        assert!(r.warning.is_some());
    }

    #[test]
    fn invalid_configs_rejected() {
        let half = |_: ResponseValue| 0.5;
        let rows = regression_rows(20, 7, |_, y, _| y);
        for cfg in [
            TestConfig { resamples: 0, ..quick(Task::Regression) },
            TestConfig { split_fraction: 1.0, ..quick(Task::Regression) },
            quick(Task::Classification),
        ] {
            assert!(run_test(&rows, &half, &cfg).is_err());
        }
        let empty = rows.subset(&[]);
        assert!(matches!(fit_statistic_model(&empty, &quick(Task::Regression)), Err(Error::Split(_))));
    }

    #[test]
    fn fixed_split_invariant_to_evaluation_order() {
        let half = |_: ResponseValue| 0.5;
        let rows = regression_rows(200, 8, |a, y, e| y + 0.5 * f64::from(a) + e);
        let fit = rows.subset(&(0..100).collect::<Vec<_>>());
        let eval = rows.subset(&(100..200).collect::<Vec<_>>());
        let cfg = TestConfig {
            resamples: 20,
            ..quick(Task::Regression)
        };
        let r = run_test_split(&fit, &eval, &half, &cfg).unwrap();
        // the resampled statistics change with the order, but t* must not
        let rev = eval.subset(&(0..100).rev().collect::<Vec<_>>());
        let r_rev = run_test_split(&fit, &rev, &half, &cfg).unwrap();
        assert!((r.t_star - r_rev.t_star).abs() < 1e-12);
    }
}
