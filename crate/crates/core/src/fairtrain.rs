//! Equalized-odds regularized fitting with fair dummies.
//!
//! Two players alternate. The discriminator `d(ŷ, a, y) ∈ (0, 1)` ascends
//!
//! ```text
//! J_d = mean[ log d(ŷ, A, y) + log(1 − d(ŷ, Ã, y)) ]
//! ```
//!
//! i.e. it learns to tell real triples from dummy triples. The predictor
//! descends
//!
//! ```text
//! J_f = (1 − λ)·mean ℓ(y, f(x))
//!     + λγ·‖cov(Ŷ, A) − cov(Ŷ, Ã)‖²
//!     + λ·mean[ log d(ŷ, A, y) + log(1 − d(ŷ, Ã, y)) ]
//! ```
//!
//! so the last term is the discriminator's own objective and the predictor
//! is rewarded when real and dummy triples look alike.
//! Each outer round draws fresh dummies and then, for every batch of the
//! round, takes `N_g` discriminator steps followed by `N_g` predictor steps.
//! In full-batch mode a round is exactly one such block.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Response, ResponseScaler, Task};
use crate::dummies::{sample_dummies, DummySampler};
use crate::error::{Error, Result};
use crate::nn::{Activation, BatchMode, DiffModel, Gradients, Loss, Mode, OptimizerSpec};
use crate::rng::{stream_rng, Rng as StreamRng};

/// Generator stream ids derived from [`TrainConfig::seed`].
pub const PREDICTOR_STREAM: u64 = 0;
pub const DISCRIMINATOR_STREAM: u64 = 1;
pub const DUMMY_STREAM: u64 = 2;

/// Architecture of a [`DiffModel`]; no hidden layers means linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn linear() -> Self {
        ModelSpec {
            hidden: Vec::new(),
            dropout: 0.0,
        }
    }

    pub fn two_layer(width: usize, dropout: f64) -> Self {
        ModelSpec {
            hidden: vec![width],
            dropout,
        }
    }

    pub fn build<R: Rng + ?Sized>(
        &self,
        input: usize,
        output: usize,
        head: Activation,
        rng: &mut R,
    ) -> Result<DiffModel> {
        DiffModel::new(input, &self.hidden, output, head, self.dropout, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Fairness weight λ ∈ [0, 1).
    pub lambda: f64,
    /// Second-moment penalty weight γ ≥ 0.
    pub gamma: f64,
    pub outer_iters: usize,
    /// Gradient steps per player per batch (`N_g`).
    pub inner_steps: usize,
    pub optimizer_f: OptimizerSpec,
    pub optimizer_d: OptimizerSpec,
    pub batch: BatchMode,
    pub pretrain_epochs_f: usize,
    pub pretrain_epochs_d: usize,
    /// Train on a standardized response (regression only); predictions are
    /// mapped back to the original scale.
    pub standardize_response: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn regression_default() -> Self {
        TrainConfig {
            lambda: 0.7,
            gamma: 10.0,
            outer_iters: 50,
            inner_steps: 60,
            optimizer_f: OptimizerSpec::sgd(0.01, 0.9),
            optimizer_d: OptimizerSpec::sgd(0.01, 0.0),
            batch: BatchMode::FullBatch,
            pretrain_epochs_f: 5,
            pretrain_epochs_d: 5,
            standardize_response: true,
            seed: 0,
        }
    }

    pub fn classification_default() -> Self {
        TrainConfig {
            lambda: 0.99,
            gamma: 0.001,
            outer_iters: 50,
            inner_steps: 2,
            optimizer_f: OptimizerSpec::adam(0.01),
            optimizer_d: OptimizerSpec::adam(0.5),
            batch: BatchMode::Minibatch(32),
            pretrain_epochs_f: 5,
            pretrain_epochs_d: 5,
            standardize_response: false,
            seed: 0,
        }
    }

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Regression => Self::regression_default(),
            Task::Classification => Self::classification_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1)", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be nonnegative", self.gamma)));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if let BatchMode::Minibatch(0) = self.batch {
            return Err(Error::Config("minibatch size must be positive".into()));
        }
        self.optimizer_f.validate()?;
        self.optimizer_d.validate()
    }
}

/// Default discriminator architecture per task.
pub fn default_discriminator(task: Task) -> ModelSpec {
    match task {
        Task::Regression => ModelSpec::two_layer(30, 0.0),
        Task::Classification => ModelSpec::two_layer(32, 0.0),
    }
}

/// One row of the training trace, recorded at the end of each outer round
/// on the full training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub predictor_objective: f64,
    pub discriminator_objective: f64,
    pub penalty: f64,
    pub train_loss: f64,
}

impl TraceRecord {
    pub fn is_finite(&self) -> bool {
        self.predictor_objective.is_finite()
            && self.discriminator_objective.is_finite()
            && self.penalty.is_finite()
            && self.train_loss.is_finite()
    }
}

/// Training rows in model space: encoded targets for the loss and the
/// response encoding fed to the discriminator.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Array2<f64>,
    pub a: Vec<f64>,
    pub response: Response,
    /// Loss target: scaled response column or one-hot classes.
    pub target: Array2<f64>,
    /// Response as seen by the discriminator (same encoding as `target`).
    pub y_code: Array2<f64>,
    pub scaler: ResponseScaler,
}

impl TrainingSet {
    pub fn new(data: &Dataset, standardize_response: bool) -> Self {
        let scaler = match (&data.y, standardize_response) {
            (Response::Continuous(y), true) => ResponseScaler::fit(y),
            _ => ResponseScaler::identity(),
        };
        let mut target = data.y.encoded();
        if data.task() == Task::Regression {
            target.mapv_inplace(|v| scaler.forward(v));
        }
        TrainingSet {
            x: data.x.clone(),
            a: data.a_f64(),
            response: data.y.clone(),
            y_code: target.clone(),
            target,
            scaler,
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select(ndarray::Axis(0), idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            target: self.target.select(ndarray::Axis(0), idx),
            y_code: self.y_code.select(ndarray::Axis(0), idx),
        }
    }

    pub fn full(&self) -> Batch {
        Batch {
            x: self.x.clone(),
            a: self.a.clone(),
            target: self.target.clone(),
            y_code: self.y_code.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub a: Vec<f64>,
    pub target: Array2<f64>,
    pub y_code: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Discriminator input rows `[ŷ | a | y]`.
pub fn discriminator_input(yhat: &ArrayView2<f64>, a: &[f64], y_code: &ArrayView2<f64>) -> Array2<f64> {
    let n = yhat.nrows();
    let k = yhat.ncols();
    let m = y_code.ncols();
    let mut out = Array2::zeros((n, k + 1 + m));
    out.slice_mut(s![.., ..k]).assign(yhat);
    for (i, &ai) in a.iter().enumerate() {
        out[[i, k]] = ai;
    }
    out.slice_mut(s![.., k + 1..]).assign(y_code);
    out
}

fn check_rows(batch: &Batch, dummies: &[f64]) -> Result<()> {
    if dummies.len() != batch.len() {
        return Err(Error::shape(batch.len(), format!("{} dummies", dummies.len())));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    Ok(())
}

/// Real rows followed by dummy rows, as one discriminator batch.
fn stacked_input(yhat: &ArrayView2<f64>, batch: &Batch, dummies: &[f64]) -> Array2<f64> {
    let real = discriminator_input(yhat, &batch.a, &batch.y_code.view());
    let fake = discriminator_input(yhat, dummies, &batch.y_code.view());
    ndarray::concatenate(ndarray::Axis(0), &[real.view(), fake.view()]).expect("equal widths")
}

fn finite_or(context: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::divergence(format!("{context} is not finite")))
    }
}

/// Clipping interval shared by every log in this module.
fn clip() -> Loss {
    Loss::binary_cross_entropy()
}

/// `J_d` for the current predictor (evaluated without dropout).
pub fn discriminator_loss(d: &DiffModel, f: &DiffModel, batch: &Batch, dummies: &[f64]) -> Result<f64> {
    check_rows(batch, dummies)?;
    let yhat = f.forward(&batch.x.view())?;
    discriminator_objective(d, &yhat.view(), batch, dummies)
}

fn discriminator_objective(d: &DiffModel, yhat: &ArrayView2<f64>, batch: &Batch, dummies: &[f64]) -> Result<f64> {
    let n = batch.len();
    let p = d.forward(&stacked_input(yhat, batch, dummies).view())?;
    let c = clip();
    let j = (0..n)
        .map(|i| c.clamp(p[[i, 0]]).ln() + (1.0 - c.clamp(p[[n + i, 0]])).ln())
        .sum::<f64>()
        / n as f64;
    finite_or("discriminator objective", j)
}

/// `J_d` and the gradient of `−J_d` (the quantity the discriminator
/// descends) with respect to the discriminator parameters, for fixed
/// predictions `yhat`.
pub fn discriminator_gradient<R: Rng + ?Sized>(
    d: &DiffModel,
    yhat: &ArrayView2<f64>,
    batch: &Batch,
    dummies: &[f64],
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    check_rows(batch, dummies)?;
    if d.output_dim() != 1 || d.head() != Activation::Sigmoid {
        return Err(Error::Config("discriminator needs a single sigmoid output".into()));
    }
    let n = batch.len();
    let nf = n as f64;
    let trace = d.forward_trace(&stacked_input(yhat, batch, dummies).view(), rng)?;
    let p = trace.output();
    let c = clip();
    let inside = |v: f64| v > c.clip && v < 1.0 - c.clip;
    let mut j = 0.0;
    let mut g = Array2::zeros((2 * n, 1));
    for i in 0..n {
        let (pr, pd) = (p[[i, 0]], p[[n + i, 0]]);
        j += c.clamp(pr).ln() + (1.0 - c.clamp(pd)).ln();
        if inside(pr) {
            g[[i, 0]] = -1.0 / (nf * pr);
        }
        if inside(pd) {
            g[[n + i, 0]] = 1.0 / (nf * (1.0 - pd));
        }
    }
    let j = finite_or("discriminator objective", j / nf)?;
    let (grads, _) = d.backward(&trace, &g)?;
    Ok((j, grads))
}

/// `‖cov(Ŷ, A) − cov(Ŷ, Ã)‖²` with denominator-n covariances, one entry per
/// prediction column.
pub fn covariance_penalty(yhat: &ArrayView2<f64>, a: &[f64], dummies: &[f64]) -> Result<f64> {
    covariance_penalty_with_grad(yhat, a, dummies).map(|(v, _)| v)
}

/// Penalty value and its derivative with respect to `yhat`.
pub fn covariance_penalty_with_grad(
    yhat: &ArrayView2<f64>,
    a: &[f64],
    dummies: &[f64],
) -> Result<(f64, Array2<f64>)> {
    let n = yhat.nrows();
    if a.len() != n || dummies.len() != n {
        return Err(Error::shape(n, format!("a: {}, dummies: {}", a.len(), dummies.len())));
    }
    if n < 2 {
        return Err(Error::UndefinedCovariance { rows: n });
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let md = dummies.iter().sum::<f64>() / nf;
    // cov(ŷ, a) − cov(ŷ, ã) = (1/n) Σ ŷᵢ cᵢ with Σ cᵢ = 0
    let c: Vec<f64> = a.iter().zip(dummies).map(|(ai, di)| (ai - ma) - (di - md)).collect();
    let mut value = 0.0;
    let mut grad = Array2::zeros(yhat.raw_dim());
    for (j, col) in yhat.columns().into_iter().enumerate() {
        let diff = col.iter().zip(&c).map(|(y, ci)| y * ci).sum::<f64>() / nf;
        value += diff * diff;
        for i in 0..n {
            grad[[i, j]] = 2.0 * diff * c[i] / nf;
        }
    }
    Ok((value, grad))
}

/// `J_f` with the predictor evaluated without dropout.
pub fn predictor_loss(
    f: &DiffModel,
    d: &DiffModel,
    batch: &Batch,
    dummies: &[f64],
    lambda: f64,
    gamma: f64,
    loss: &Loss,
) -> Result<f64> {
    check_rows(batch, dummies)?;
    let yhat = f.forward(&batch.x.view())?;
    predictor_objective(d, &yhat.view(), batch, dummies, lambda, gamma, loss)
}

fn predictor_objective(
    d: &DiffModel,
    yhat: &ArrayView2<f64>,
    batch: &Batch,
    dummies: &[f64],
    lambda: f64,
    gamma: f64,
    loss: &Loss,
) -> Result<f64> {
    let fit = loss.value(yhat, &batch.target.view())?;
    if lambda == 0.0 {
        return finite_or("predictor objective", fit);
    }
    let n = batch.len();
    let p = d.forward(&stacked_input(yhat, batch, dummies).view())?;
    let c = clip();
    let adv = (0..n)
        .map(|i| c.clamp(p[[i, 0]]).ln() + (1.0 - c.clamp(p[[n + i, 0]])).ln())
        .sum::<f64>()
        / n as f64;
    let pen = if gamma > 0.0 {
        covariance_penalty(yhat, &batch.a, dummies)?
    } else {
        0.0
    };
    finite_or(
        "predictor objective",
        (1.0 - lambda) * fit + lambda * gamma * pen + lambda * adv,
    )
}

/// `J_f` and its gradient with respect to the predictor parameters. The
/// predictor runs in its current mode (dropout masks from `rng`); the
/// discriminator is held fixed.
#[allow(clippy::too_many_arguments)]
pub fn predictor_gradient<R: Rng + ?Sized>(
    f: &DiffModel,
    d: &DiffModel,
    batch: &Batch,
    dummies: &[f64],
    lambda: f64,
    gamma: f64,
    loss: &Loss,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    check_rows(batch, dummies)?;
    loss.check_head(f.head())?;
    let trace = f.forward_trace(&batch.x.view(), rng)?;
    let yhat = trace.output().view();
    let fit = loss.value(&yhat, &batch.target.view())?;
    let mut g_out = loss.grad(&yhat, &batch.target.view())?;
    let mut value = fit;
    if lambda != 0.0 {
        g_out *= 1.0 - lambda;
        let n = batch.len();
        let nf = n as f64;
        let k = f.output_dim();
        let input = stacked_input(&yhat, batch, dummies);
        let d_trace = d.forward_trace(&input.view(), rng)?;
        let p = d_trace.output();
        let c = clip();
        let inside = |v: f64| v > c.clip && v < 1.0 - c.clip;
        let mut adv = 0.0;
        let mut g_d = Array2::zeros((2 * n, 1));
        for i in 0..n {
            let (pr, pd) = (p[[i, 0]], p[[n + i, 0]]);
            adv += c.clamp(pr).ln() + (1.0 - c.clamp(pd)).ln();
            if inside(pr) {
                g_d[[i, 0]] = lambda / (nf * pr);
            }
            if inside(pd) {
                g_d[[n + i, 0]] = -lambda / (nf * (1.0 - pd));
            }
        }
        let (_, g_in) = d.backward(&d_trace, &g_d)?;
        // both real and dummy rows depend on the same ŷᵢ
        g_out += &g_in.slice(s![..n, ..k]);
        g_out += &g_in.slice(s![n.., ..k]);
        value = (1.0 - lambda) * fit + lambda * adv / nf;
        if gamma > 0.0 {
            let (pen, g_pen) = covariance_penalty_with_grad(&yhat, &batch.a, dummies)?;
            value += lambda * gamma * pen;
            g_out.scaled_add(lambda * gamma, &g_pen);
        }
    }
    let value = finite_or("predictor objective", value)?;
    let (grads, _) = f.backward(&trace, &g_out)?;
    Ok((value, grads))
}

/// The fitted predictor and everything needed to reproduce or test it.
#[derive(Debug, Clone)]
pub struct FairModel {
    pub predictor: DiffModel,
    pub discriminator: DiffModel,
    pub sampler: DummySampler,
    pub task: Task,
    pub scaler: ResponseScaler,
    pub config: TrainConfig,
    pub trace: Vec<TraceRecord>,
}

impl FairModel {
    /// Predictions on the response scale: the regression value (`n × 1`) or
    /// class probabilities (`n × L`).
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.predictor.forward(x)?;
        if self.task == Task::Regression {
            let s = self.scaler;
            out.mapv_inplace(|v| s.inverse(v));
        }
        Ok(out)
    }
}

pub fn loss_for(task: Task) -> Loss {
    match task {
        Task::Regression => Loss::mse(),
        Task::Classification => Loss::cross_entropy(),
    }
}

fn head_for(task: Task) -> Activation {
    match task {
        Task::Regression => Activation::Identity,
        Task::Classification => Activation::Softmax,
    }
}

/// The dummy vectors used by successive rounds of a fit.
pub struct DummyStream<'a> {
    sampler: &'a DummySampler,
    response: &'a Response,
    rng: StreamRng,
}

impl<'a> DummyStream<'a> {
    pub fn new(sampler: &'a DummySampler, response: &'a Response, seed: u64) -> Self {
        DummyStream {
            sampler,
            response,
            rng: stream_rng(seed, DUMMY_STREAM),
        }
    }

    pub fn draw(&mut self) -> Vec<f64> {
        sample_dummies(self.sampler, self.response, &mut self.rng)
            .into_iter()
            .map(f64::from)
            .collect()
    }
}

/// Writes the trace as CSV with columns `iteration,J_f,J_d,penalty,train_loss`.
pub fn write_trace<W: std::io::Write>(trace: &[TraceRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "J_f", "J_d", "penalty", "train_loss"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.predictor_objective.to_string(),
            r.discriminator_objective.to_string(),
            r.penalty.to_string(),
            r.train_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn diverged(err: Error, trace: &[TraceRecord]) -> Error {
    match err {
        Error::Divergence { context, .. } => Error::Divergence {
            context,
            trace: trace.to_vec(),
        },
        other => other,
    }
}

/// Runs the alternating fit. `train` holds model-ready features; the
/// sampler must have been fitted on the same training distribution.
pub fn fit_fair(
    train: &Dataset,
    sampler: &DummySampler,
    f_spec: &ModelSpec,
    d_spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<FairModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    let task = train.task();
    let set = TrainingSet::new(train, config.standardize_response && task == Task::Regression);
    let loss = loss_for(task);
    let n = set.len();
    let k = set.target.ncols();

    let mut f_rng: StreamRng = stream_rng(config.seed, PREDICTOR_STREAM);
    let mut d_rng: StreamRng = stream_rng(config.seed, DISCRIMINATOR_STREAM);
    let mut dummy_stream = DummyStream::new(sampler, &set.response, config.seed);

    let mut f = f_spec.build(train.n_features(), k, head_for(task), &mut f_rng)?;
    let mut d = d_spec.build(k + 1 + set.y_code.ncols(), 1, Activation::Sigmoid, &mut d_rng)?;
    let mut opt_f = config.optimizer_f.build()?;
    let mut opt_d = config.optimizer_d.build()?;
    let mut trace: Vec<TraceRecord> = Vec::with_capacity(config.outer_iters);

    for _ in 0..config.pretrain_epochs_f {
        for idx in config.batch.epoch(n, &mut f_rng) {
            let b = set.batch(&idx);
            let (_, g) = crate::nn::gradient(&f, &loss, &b.x.view(), &b.target.view(), &mut f_rng)?;
            opt_f.step(&mut f, &g)?;
        }
    }

    let d_step = |d: &mut DiffModel,
                      opt: &mut crate::nn::Optimizer,
                      yhat: &ArrayView2<f64>,
                      b: &Batch,
                      dummies: &[f64],
                      rng: &mut StreamRng|
     -> Result<()> {
        let (_, g) = discriminator_gradient(d, yhat, b, dummies, rng)?;
        opt.step(d, &g)
    };

    let mut dummies = dummy_stream.draw();
    for _ in 0..config.pretrain_epochs_d {
        for idx in config.batch.epoch(n, &mut d_rng) {
            let b = set.batch(&idx);
            let db: Vec<f64> = idx.iter().map(|&i| dummies[i]).collect();
            let yhat = f.forward(&b.x.view())?;
            d_step(&mut d, &mut opt_d, &yhat.view(), &b, &db, &mut d_rng)?;
        }
    }

    for iteration in 0..config.outer_iters {
        if iteration > 0 {
            dummies = dummy_stream.draw();
        }
        for idx in config.batch.epoch(n, &mut f_rng) {
            let b = set.batch(&idx);
            let db: Vec<f64> = idx.iter().map(|&i| dummies[i]).collect();
            let yhat = f.forward(&b.x.view())?;
            d.set_mode(Mode::Train);
            // with λ = 0 the discriminator never reaches the predictor
            let d_steps = if config.lambda == 0.0 { 0 } else { config.inner_steps };
            for _ in 0..d_steps {
                d_step(&mut d, &mut opt_d, &yhat.view(), &b, &db, &mut d_rng)
                    .map_err(|e| diverged(e, &trace))?;
            }
            d.set_mode(Mode::Eval);
            for _ in 0..config.inner_steps {
                let (_, g) = predictor_gradient(
                    &f,
                    &d,
                    &b,
                    &db,
                    config.lambda,
                    config.gamma,
                    &loss,
                    &mut f_rng,
                )
                .map_err(|e| diverged(e, &trace))?;
                opt_f.step(&mut f, &g).map_err(|e| diverged(e, &trace))?;
            }
        }
        let full = set.full();
        let yhat = f.forward(&full.x.view())?;
        let record = TraceRecord {
            iteration,
            predictor_objective: predictor_objective(
                &d,
                &yhat.view(),
                &full,
                &dummies,
                config.lambda,
                config.gamma,
                &loss,
            )
            .unwrap_or(f64::NAN),
            discriminator_objective: discriminator_objective(&d, &yhat.view(), &full, &dummies)
                .unwrap_or(f64::NAN),
            penalty: if n >= 2 {
                covariance_penalty(&yhat.view(), &full.a, &dummies)?
            } else {
                0.0
            },
            train_loss: loss.value(&yhat.view(), &full.target.view())?,
        };
        let finite = record.is_finite();
        trace.push(record);
        if !finite {
            return Err(Error::Divergence {
                context: format!("non-finite training objective at round {iteration}"),
                trace,
            });
        }
    }
    d.set_mode(Mode::Eval);
    f.set_mode(Mode::Eval);
    Ok(FairModel {
        predictor: f,
        discriminator: d,
        sampler: sampler.clone(),
        task,
        scaler: set.scaler,
        config: config.clone(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Standardizer, SyntheticConfig};
    use crate::dummies::{fit_sampler, SamplerConfig};
    use crate::nn::gradcheck::{max_relative_error, numeric_gradient};
    use crate::nn::gradient;
    use rand::Rng;

    fn toy_batch(n: usize, task: Task, seed: u64) -> (Batch, Vec<f64>) {
        let mut rng = stream_rng(seed, 5);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let a: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.6))).collect();
        let dummies: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.6))).collect();
        let target = match task {
            Task::Regression => Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 2.0 - 1.0),
            Task::Classification => {
                let mut t = Array2::zeros((n, 3));
                for i in 0..n {
                    t[[i, rng.random_range(0..3)]] = 1.0;
                }
                t
            }
        };
        let batch = Batch {
            x,
            a,
            y_code: target.clone(),
            target,
        };
        (batch, dummies)
    }

    fn models(task: Task, seed: u64) -> (DiffModel, DiffModel) {
        let mut rng = stream_rng(seed, 6);
        let k = if task == Task::Regression { 1 } else { 3 };
        let mut f = ModelSpec::two_layer(6, 0.0).build(3, k, head_for(task), &mut rng).unwrap();
        let mut d = ModelSpec::two_layer(5, 0.0)
            .build(2 * k + 1, 1, Activation::Sigmoid, &mut rng)
            .unwrap();
        f.set_mode(Mode::Eval);
        d.set_mode(Mode::Eval);
        (f, d)
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        for (seed, task) in [(1, Task::Regression), (2, Task::Classification), (3, Task::Regression)] {
            let (batch, dummies) = toy_batch(12, task, seed);
            let (f, d) = models(task, seed);
            let loss = loss_for(task);
            let mut rng = stream_rng(0, 0);

            let (v, g) = predictor_gradient(&f, &d, &batch, &dummies, 0.6, 2.0, &loss, &mut rng).unwrap();
            assert!((v - predictor_loss(&f, &d, &batch, &dummies, 0.6, 2.0, &loss).unwrap()).abs() < 1e-12);
            let num = numeric_gradient(&f.flat_params(), 1e-5, |t| {
                let mut m = f.clone();
                m.set_flat_params(t)?;
                predictor_loss(&m, &d, &batch, &dummies, 0.6, 2.0, &loss)
            })
            .unwrap();
            let err = max_relative_error(&g.flatten(), &num, 1e-6);
            assert!(err <= 1e-4, "J_f {task:?}: {err}");

            let yhat = f.forward(&batch.x.view()).unwrap();
            let (j, g) = discriminator_gradient(&d, &yhat.view(), &batch, &dummies, &mut rng).unwrap();
            assert!((j - discriminator_loss(&d, &f, &batch, &dummies).unwrap()).abs() < 1e-12);
            let num = numeric_gradient(&d.flat_params(), 1e-5, |t| {
                let mut m = d.clone();
                m.set_flat_params(t)?;
                discriminator_loss(&m, &f, &batch, &dummies).map(|j| -j)
            })
            .unwrap();
            let err = max_relative_error(&g.flatten(), &num, 1e-6);
            assert!(err <= 1e-4, "J_d {task:?}: {err}");
        }
    }

    #[test]
    fn covariance_penalty_by_hand() {
        let yhat = ndarray::array![[1.0], [2.0], [3.0], [4.0]];
        let (pen, grad) =
            covariance_penalty_with_grad(&yhat.view(), &[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        // c = (0, -1, 1, 0), diff = 1/4
        assert!((pen - 0.0625).abs() < 1e-15);
        assert_eq!(grad.column(0).to_vec(), vec![0.0, -0.125, 0.125, 0.0]);
        let same = covariance_penalty(&yhat.view(), &[0.0, 1.0, 1.0, 0.0], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(same, 0.0);
        let one = ndarray::array![[1.0]];
        assert!(matches!(
            covariance_penalty(&one.view(), &[1.0], &[0.0]),
            Err(Error::UndefinedCovariance { rows: 1 })
        ));
    }

    #[test]
    fn lambda_zero_is_plain_loss_and_constant_d_gives_two_log_half() {
        let (batch, dummies) = toy_batch(10, Task::Regression, 4);
        let (f, mut d) = models(Task::Regression, 4);
        let loss = Loss::mse();
        let yhat = f.forward(&batch.x.view()).unwrap();
        let fit = loss.value(&yhat.view(), &batch.target.view()).unwrap();
        assert_eq!(predictor_loss(&f, &d, &batch, &dummies, 0.0, 5.0, &loss).unwrap(), fit);
        d.set_flat_params(&vec![0.0; d.num_params()]).unwrap();
        let j = predictor_loss(&f, &d, &batch, &dummies, 0.3, 0.0, &loss).unwrap();
        let expected = 0.7 * fit + 0.3 * 2.0 * 0.5f64.ln();
        assert!((j - expected).abs() < 1e-12);
        assert!((discriminator_loss(&d, &f, &batch, &dummies).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_learns_to_spot_real_attribute() {
        // ŷ = a exactly, dummies independent: real triples are separable
        let n = 200;
        let mut rng = stream_rng(7, 0);
        let a: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5))).collect();
        let dummies: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5))).collect();
        let yhat = Array2::from_shape_vec((n, 1), a.clone()).unwrap();
        let y = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let batch = Batch {
            x: Array2::zeros((n, 0)),
            a,
            target: y.clone(),
            y_code: y,
        };
        let mut d = ModelSpec::two_layer(16, 0.0).build(3, 1, Activation::Sigmoid, &mut rng).unwrap();
        let mut opt = OptimizerSpec::adam(0.01).build().unwrap();
        let (j0, _) = discriminator_gradient(&d, &yhat.view(), &batch, &dummies, &mut rng).unwrap();
        for _ in 0..500 {
            let (_, g) = discriminator_gradient(&d, &yhat.view(), &batch, &dummies, &mut rng).unwrap();
            opt.step(&mut d, &g).unwrap();
        }
        let (j1, _) = discriminator_gradient(&d, &yhat.view(), &batch, &dummies, &mut rng).unwrap();
        assert!(j1 > j0 + 0.3, "J_d went from {j0} to {j1}");
        assert!(j1 > -1.0, "J_d = {j1}");
    }

    fn synthetic_train(n: usize, seed: u64) -> Dataset {
        let data = generate_synthetic(&SyntheticConfig {
            n,
            seed,
            ..Default::default()
        })
        .unwrap();
        let (_, x) = Standardizer::fit_transform(&data.x.view());
        Dataset { x, ..data }
    }

    #[test]
    fn lambda_zero_matches_direct_training_loop() {
        let train = synthetic_train(150, 2);
        let sampler = fit_sampler(&train.a, &train.y, &SamplerConfig::default()).unwrap();
        let spec = ModelSpec::two_layer(8, 0.2);
        let cfg = TrainConfig {
            lambda: 0.0,
            outer_iters: 4,
            inner_steps: 3,
            batch: BatchMode::Minibatch(32),
            optimizer_f: OptimizerSpec::adam(0.01),
            seed: 11,
            ..TrainConfig::regression_default()
        };
        let fitted = fit_fair(&train, &sampler, &spec, &default_discriminator(Task::Regression), &cfg).unwrap();

        let set = TrainingSet::new(&train, true);
        let loss = Loss::mse();
        let mut rng = stream_rng(11, PREDICTOR_STREAM);
        let mut f = spec.build(2, 1, Activation::Identity, &mut rng).unwrap();
        let mut opt = cfg.optimizer_f.build().unwrap();
        let mut step = |f: &mut DiffModel, idx: &[usize], rng: &mut StreamRng| {
            let b = set.batch(idx);
            let (_, g) = gradient(f, &loss, &b.x.view(), &b.target.view(), rng).unwrap();
            opt.step(f, &g).unwrap();
        };
        for _ in 0..cfg.pretrain_epochs_f {
            for idx in cfg.batch.epoch(set.len(), &mut rng) {
                step(&mut f, &idx, &mut rng);
            }
        }
        for _ in 0..cfg.outer_iters {
            for idx in cfg.batch.epoch(set.len(), &mut rng) {
                for _ in 0..cfg.inner_steps {
                    step(&mut f, &idx, &mut rng);
                }
            }
        }
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(fitted.predictor.flat_params()), bits(f.flat_params()));
    }

    fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(m);
        let mut out = [0.0; 3];
        for (j, o) in out.iter_mut().enumerate() {
            let mut mj = m;
            for i in 0..3 {
                mj[i][j] = v[i];
            }
            *o = det(mj) / d;
        }
        out
    }

    #[test]
    fn lambda_zero_linear_fit_reaches_least_squares() {
        let train = synthetic_train(500, 3);
        let sampler = fit_sampler(&train.a, &train.y, &SamplerConfig::default()).unwrap();
        let cfg = TrainConfig {
            lambda: 0.0,
            seed: 1,
            ..TrainConfig::regression_default()
        };
        let fitted = fit_fair(&train, &sampler, &ModelSpec::linear(), &default_discriminator(Task::Regression), &cfg)
            .unwrap();
        let Response::Continuous(y) = &train.y else { unreachable!() };
        // normal equations for [1, x1, x2]
        let mut m = [[0.0; 3]; 3];
        let mut v = [0.0; 3];
        for i in 0..train.len() {
            let row = [1.0, train.x[[i, 0]], train.x[[i, 1]]];
            for r in 0..3 {
                v[r] += row[r] * y[i];
                for c in 0..3 {
                    m[r][c] += row[r] * row[c];
                }
            }
        }
        let ols = solve3(m, v);
        let layer = &fitted.predictor.layers()[0];
        let s = fitted.scaler;
        let got = [
            layer.bias[0] * s.scale + s.mean,
            layer.weights[[0, 0]] * s.scale,
            layer.weights[[1, 0]] * s.scale,
        ];
        for j in 0..3 {
            assert!((got[j] - ols[j]).abs() <= 1e-3, "coef {j}: {} vs {}", got[j], ols[j]);
        }
        assert_eq!(fitted.trace.len(), cfg.outer_iters);
        assert!(fitted.trace.iter().all(TraceRecord::is_finite));
    }

    #[test]
    fn zero_features_fit_the_marginal_mean() {
        let full = synthetic_train(300, 4);
        let train = Dataset::new(Array2::zeros((300, 0)), full.a.clone(), full.y.clone(), vec![]).unwrap();
        let sampler = fit_sampler(&train.a, &train.y, &SamplerConfig::default()).unwrap();
        let cfg = TrainConfig {
            outer_iters: 20,
            seed: 2,
            ..TrainConfig::regression_default()
        };
        let fitted = fit_fair(&train, &sampler, &ModelSpec::linear(), &default_discriminator(Task::Regression), &cfg)
            .unwrap();
        let Response::Continuous(y) = &train.y else { unreachable!() };
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let pred = fitted.predict(&train.x.view()).unwrap();
        assert!(pred.iter().all(|p| (p - pred[[0, 0]]).abs() < 1e-12));
        assert!((pred[[0, 0]] - mean).abs() <= 0.05 * fitted.scaler.scale, "{} vs {mean}", pred[[0, 0]]);
        assert!(fitted.trace.iter().all(|r| r.penalty < 1e-20));
    }

    #[test]
    fn rounds_draw_fresh_dummies() {
        let train = synthetic_train(200, 5);
        let sampler = fit_sampler(&train.a, &train.y, &SamplerConfig::default()).unwrap();
        let mut stream = DummyStream::new(&sampler, &train.y, 3);
        let draws: Vec<Vec<f64>> = (0..5).map(|_| stream.draw()).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(draws[i], draws[j]);
            }
        }
        let mut again = DummyStream::new(&sampler, &train.y, 3);
        assert_eq!(again.draw(), draws[0]);
    }

    #[test]
    fn divergence_reported() {
        let train = synthetic_train(100, 6);
        let sampler = fit_sampler(&train.a, &train.y, &SamplerConfig::default()).unwrap();
        let cfg = TrainConfig {
            optimizer_f: OptimizerSpec::sgd(1e6, 0.9),
            pretrain_epochs_f: 0,
            ..TrainConfig::regression_default()
        };
        let err = fit_fair(&train, &sampler, &ModelSpec::linear(), &default_discriminator(Task::Regression), &cfg);
        assert!(matches!(err, Err(Error::Divergence { .. })), "{err:?}");
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::regression_default();
        assert!(base.validate().is_ok());
        assert!(TrainConfig::classification_default().validate().is_ok());
        for bad in [
            TrainConfig { lambda: 1.0, ..base.clone() },
            TrainConfig { lambda: -0.1, ..base.clone() },
            TrainConfig { gamma: -1.0, ..base.clone() },
            TrainConfig { inner_steps: 0, ..base.clone() },
            TrainConfig { batch: BatchMode::Minibatch(0), ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn trace_csv_header() {
        let rec = TraceRecord {
            iteration: 0,
            predictor_objective: 1.0,
            discriminator_objective: -1.0,
            penalty: 0.5,
            train_loss: 2.0,
        };
        let mut buf = Vec::new();
        write_trace(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iteration,J_f,J_d,penalty,train_loss\n0,1,-1,0.5,2\n");
    }
}
