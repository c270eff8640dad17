use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// Row-wise softmax; only valid as an output head.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Affine layer `z = x W + b` with `W` stored as `(in_dim, out_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim).max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
        let weights = Array2::from_shape_fn((in_dim, out_dim), |_| dist.sample(rng));
        Dense {
            weights,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// A feed-forward network: zero or more ReLU hidden layers (each followed by
/// inverted dropout in train mode) and an output head.
///
/// With no hidden layers this is a linear / logistic / softmax regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffModel {
    layers: Vec<Dense>,
    hidden_activation: Activation,
    head: Activation,
    dropout: f64,
    mode: Mode,
}

/// Per-layer gradient arrays, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, consumed by [`DiffModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    /// Scaled dropout masks of each hidden layer (train mode only).
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn apply_head(head: Activation, z: &mut Array2<f64>) {
    match head {
        Activation::Identity => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
        Activation::Softmax => softmax_rows(z),
    }
}

impl DiffModel {
    /// Network with the given hidden widths. `hidden = &[]` gives a linear model.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        head: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        if output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if head == Activation::Relu {
            return Err(Error::Config("relu is not an output head".into()));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Ok(DiffModel {
            layers,
            hidden_activation: Activation::Relu,
            head,
            dropout,
            mode: Mode::Train,
        })
    }

    pub fn linear<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        head: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(input_dim, &[], output_dim, head, 0.0, rng)
    }

    /// Builds a model from explicit layers (checkpoint loading, tests).
    pub fn from_layers(layers: Vec<Dense>, head: Activation, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    format!("layer input dim {}", pair[0].out_dim()),
                    pair[1].in_dim(),
                ));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.out_dim()) {
            return Err(Error::Config("bias length differs from layer width".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(DiffModel {
            layers,
            hidden_activation: Activation::Relu,
            head,
            dropout,
            mode: Mode::Train,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn head(&self) -> Activation {
        self.head
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer: row-major weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), params.len()));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input columns", self.input_dim()),
                format!("{} columns", x.ncols()),
            ));
        }
        Ok(())
    }

    /// Deterministic evaluation-mode forward pass (dropout off), regardless
    /// of the model's mode flag.
    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = self.layers[0].affine(x);
        for layer in &self.layers[1..] {
            apply_head(self.hidden_activation, &mut h);
            h = layer.affine(&h.view());
        }
        apply_head(self.head, &mut h);
        Ok(h)
    }

    /// Forward pass that records what backpropagation needs. Dropout masks
    /// are drawn from `rng` when the model is in train mode.
    pub fn forward_trace<R: Rng + ?Sized>(
        &self,
        x: &ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n_layers = self.layers.len();
        let drop = self.mode == Mode::Train && self.dropout > 0.0;
        let keep = 1.0 - self.dropout;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut hidden_pre = Vec::with_capacity(n_layers - 1);
        let mut masks = Vec::with_capacity(n_layers - 1);

        let mut current = x.to_owned();
        for layer in &self.layers[..n_layers - 1] {
            let z = layer.affine(&current.view());
            let mut h = z.mapv(|v| v.max(0.0));
            let mask = if drop {
                let m = Array2::from_shape_fn(h.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                h *= &m;
                Some(m)
            } else {
                None
            };
            inputs.push(current);
            hidden_pre.push(z);
            masks.push(mask);
            current = h;
        }
        let mut out = self.layers[n_layers - 1].affine(&current.view());
        inputs.push(current);
        apply_head(self.head, &mut out);
        Ok(ForwardTrace {
            inputs,
            hidden_pre,
            masks,
            output: out,
        })
    }

    /// Backpropagates `grad_output` (derivative of a scalar objective with
    /// respect to the model output, post-head) and returns parameter
    /// gradients together with the gradient with respect to the input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if grad_output.dim() != trace.output.dim() {
            return Err(Error::shape(
                format!("{:?}", trace.output.dim()),
                format!("{:?}", grad_output.dim()),
            ));
        }
        let y = &trace.output;
        let mut delta = match self.head {
            Activation::Identity => grad_output.clone(),
            Activation::Relu => grad_output * &y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Sigmoid => grad_output * &y.mapv(|v| v * (1.0 - v)),
            Activation::Softmax => {
                let dot = (grad_output * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                y * &(grad_output - &dot)
            }
        };

        let n_layers = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let gw = trace.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
            let mut g_in = delta.dot(&layer.weights.t());
            if l > 0 {
                if let Some(mask) = &trace.masks[l - 1] {
                    g_in *= mask;
                }
                ndarray::Zip::from(&mut g_in)
                    .and(&trace.hidden_pre[l - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = g_in;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

impl Gradients {
    pub fn zeros_like(model: &DiffModel) -> Self {
        Gradients {
            layers: model
                .layers()
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
