//! Estimation of `P(A = 1 | Y)` and sampling of fair dummy attributes.
//!
//! For a continuous response the two class-conditional densities
//! `P(Y | A = a)` are triangular-kernel density estimates and the posterior
//! follows from Bayes' rule with the empirical prior. For a class-valued
//! response the posterior is the smoothed per-class frequency of `A = 1`.
//!
//! Dummies are drawn as independent Bernoulli variables from the posterior
//! evaluated at each `Yᵢ`. The draw reads only `Y` and the generator, so the
//! resulting `Ã` is conditionally independent of any prediction given `Y`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Response, ResponseValue};
use crate::error::{Error, Result};

/// Anything that can evaluate `P(A = 1 | Y = y)`.
pub trait AttributePosterior {
    fn posterior(&self, y: ResponseValue) -> f64;

    fn posteriors(&self, y: &Response) -> Vec<f64> {
        (0..y.len()).map(|i| self.posterior(y.get(i))).collect()
    }
}

impl<F: Fn(ResponseValue) -> f64> AttributePosterior for F {
    fn posterior(&self, y: ResponseValue) -> f64 {
        self(y)
    }
}

/// Independent `Bernoulli(pᵢ)` draws.
pub fn draw_bernoulli<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vec<u8> {
    probs
        .iter()
        .map(|&p| u8::from(rng.random::<f64>() < p))
        .collect()
}

/// Fair dummies `Ãᵢ ~ Bernoulli(P(A = 1 | Yᵢ))`.
pub fn sample_dummies<P: AttributePosterior + ?Sized, R: Rng + ?Sized>(
    posterior: &P,
    y: &Response,
    rng: &mut R,
) -> Vec<u8> {
    draw_bernoulli(&posterior.posteriors(y), rng)
}

/// Bayes' rule for a binary attribute given the two likelihoods and `P(A = 1)`.
pub fn bayes_posterior(likelihood1: f64, likelihood0: f64, prior: f64) -> f64 {
    let num = likelihood1 * prior;
    num / (num + likelihood0 * (1.0 - prior))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Additive smoothing for per-class frequencies.
    pub smoothing: f64,
    /// Floor applied to both density estimates before Bayes' rule.
    pub density_floor: f64,
    /// Bandwidth floor as a fraction of the pooled response std.
    pub bandwidth_floor: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            smoothing: 0.5,
            density_floor: 1e-12,
            bandwidth_floor: 1e-3,
        }
    }
}

/// Triangular ("linear") kernel density estimate,
/// `f(y) = (1 / n h) Σ max(0, 1 − |y − yᵢ| / h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularKde {
    /// Sorted sample.
    points: Vec<f64>,
    bandwidth: f64,
}

impl TriangularKde {
    pub fn new(mut points: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("density estimate needs at least one point".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth {bandwidth} must be positive")));
        }
        points.sort_by(f64::total_cmp);
        Ok(TriangularKde { points, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.points.partition_point(|&p| p <= y - h);
        let hi = self.points.partition_point(|&p| p < y + h);
        let sum: f64 = self.points[lo..hi]
            .iter()
            .map(|&p| (1.0 - (y - p).abs() / h).max(0.0))
            .sum();
        sum / (self.points.len() as f64 * h)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 · min(σ̂, IQR / 1.34) · n^(-1/5)`.
/// Falls back to whichever spread is nonzero when the other vanishes.
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    if sample.len() < 2 {
        return 0.0;
    }
    let (_, sd) = mean_sd(sample);
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    0.9 * spread * (sample.len() as f64).powf(-0.2)
}

/// Fitted `P(A | Y)` for a binary attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DummySampler {
    Continuous {
        prior: f64,
        density1: TriangularKde,
        density0: TriangularKde,
        density_floor: f64,
    },
    Discrete {
        prior: f64,
        /// Smoothed `P(A = 1 | Y = ℓ)` per class.
        class_posteriors: Vec<f64>,
    },
}

impl DummySampler {
    pub fn prior(&self) -> f64 {
        match self {
            DummySampler::Continuous { prior, .. } | DummySampler::Discrete { prior, .. } => *prior,
        }
    }
}

impl AttributePosterior for DummySampler {
    fn posterior(&self, y: ResponseValue) -> f64 {
        match (self, y) {
            (
                DummySampler::Continuous {
                    prior,
                    density1,
                    density0,
                    density_floor,
                },
                ResponseValue::Continuous(v),
            ) => {
                let l1 = density1.density(v).max(*density_floor);
                let l0 = density0.density(v).max(*density_floor);
                bayes_posterior(l1, l0, *prior)
            }
            (DummySampler::Discrete { class_posteriors, prior }, ResponseValue::Class(c)) => {
                class_posteriors.get(c).copied().unwrap_or(*prior)
            }
            (DummySampler::Continuous { prior, .. }, ResponseValue::Class(_))
            | (DummySampler::Discrete { prior, .. }, ResponseValue::Continuous(_)) => {
                debug_assert!(false, "response kind does not match the sampler");
                *prior
            }
        }
    }
}

/// Fits the sampler on training pairs `(Aᵢ, Yᵢ)`.
pub fn fit_sampler(a: &[u8], y: &Response, config: &SamplerConfig) -> Result<DummySampler> {
    if a.len() != y.len() {
        return Err(Error::shape(y.len(), a.len()));
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("sampler needs at least two rows".into()));
    }
    if let Some(v) = a.iter().find(|&&v| v > 1) {
        return Err(Error::DegenerateAttribute(format!(
            "attribute value {v} found; only binary attributes are supported"
        )));
    }
    let n1 = a.iter().filter(|&&v| v == 1).count();
    if n1 == 0 || n1 == a.len() {
        return Err(Error::DegenerateAttribute(format!(
            "all {} rows have A = {}",
            a.len(),
            a[0]
        )));
    }
    let prior = n1 as f64 / a.len() as f64;
    match y {
        Response::Continuous(values) => {
            let (_, pooled_sd) = mean_sd(values);
            let floor = if pooled_sd > 0.0 {
                config.bandwidth_floor * pooled_sd
            } else {
                config.bandwidth_floor
            };
            let group = |g: u8| -> Vec<f64> {
                values
                    .iter()
                    .zip(a)
                    .filter(|(_, &av)| av == g)
                    .map(|(v, _)| *v)
                    .collect()
            };
            let (g1, g0) = (group(1), group(0));
            let h1 = silverman_bandwidth(&g1).max(floor);
            let h0 = silverman_bandwidth(&g0).max(floor);
            Ok(DummySampler::Continuous {
                prior,
                density1: TriangularKde::new(g1, h1)?,
                density0: TriangularKde::new(g0, h0)?,
                density_floor: config.density_floor,
            })
        }
        Response::Classes { labels, n_classes } => {
            let mut ones = vec![0usize; *n_classes];
            let mut totals = vec![0usize; *n_classes];
            for (&l, &av) in labels.iter().zip(a) {
                totals[l] += 1;
                ones[l] += usize::from(av);
            }
            let s = config.smoothing;
            let class_posteriors = ones
                .iter()
                .zip(&totals)
                .map(|(&c1, &t)| (c1 as f64 + s) / (t as f64 + 2.0 * s))
                .collect();
            Ok(DummySampler::Discrete {
                prior,
                class_posteriors,
            })
        }
    }
}
