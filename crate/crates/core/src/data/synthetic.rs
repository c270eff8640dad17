use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::csv_io::{AttributeColumn, FeatureColumn, ResponseColumn, Schema, Table};
use super::{Dataset, Response, Task};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Two-feature regression population with a 90% majority group.
///
/// Given `A = 0` the features are `(Z1, 3·Z2)`, given `A = 1` they are
/// `(3·Z1, Z2)`, and `Y = Xᵀβ_A + ε`. The two groups share the same law of
/// `Y | X` up to swapping coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub group1_fraction: f64,
    pub beta0: [f64; 2],
    pub beta1: [f64; 2],
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 4000,
            group1_fraction: 0.9,
            beta0: [0.0, 3.0],
            beta1: [3.0, 0.0],
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic n must be positive".into()));
        }
        if !(self.group1_fraction > 0.0 && self.group1_fraction < 1.0) {
            return Err(Error::Config(format!(
                "group-1 proportion {} outside (0, 1)",
                self.group1_fraction
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise std must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, 0);
    let n = config.n;
    let mut x = Array2::zeros((n, 2));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let group = u8::from(rng.random::<f64>() < config.group1_fraction);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let (x1, x2, beta) = if group == 0 {
            (z1, 3.0 * z2, config.beta0)
        } else {
            (3.0 * z1, z2, config.beta1)
        };
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        a.push(group);
        y.push(x1 * beta[0] + x2 * beta[1] + config.noise_std * eps);
    }
    Dataset::new(x, a, Response::Continuous(y), vec!["x1".into(), "x2".into()])
}

/// The regression population as a CSV-ready table plus its schema.
pub fn synthetic_regression_table(config: &SyntheticConfig) -> Result<(Table, Schema)> {
    let d = generate_synthetic(config)?;
    let Response::Continuous(y) = &d.y else {
        unreachable!("regression generator");
    };
    let headers = vec!["x1".to_string(), "x2".into(), "group".into(), "y".into()];
    let rows = (0..d.len())
        .map(|i| {
            vec![
                d.x[[i, 0]].to_string(),
                d.x[[i, 1]].to_string(),
                d.a[i].to_string(),
                y[i].to_string(),
            ]
        })
        .collect();
    let schema = Schema {
        task: Task::Regression,
        features: vec![FeatureColumn::numeric("x1"), FeatureColumn::numeric("x2")],
        attribute: AttributeColumn::binary("group", "1", "0"),
        response: ResponseColumn {
            name: "y".into(),
            classes: None,
        },
    };
    Ok((Table { headers, rows }, schema))
}

/// Four-class, nursery-flavoured population used as the bundled
/// classification fixture.
///
/// Classes are uniform and independent of the attribute, so `P(A | Y)` is
/// constant. Two numeric scores carry the class signal; the majority group
/// (`finance = convenient`) sees a sharp `parents_score` and a noisy
/// `social_score`, the minority group the reverse. A predictor that leans on
/// `parents_score` therefore serves the groups unequally given the class.
/// `housing` depends on the class only and `children` is pure noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NurseryLikeConfig {
    pub n: usize,
    pub group1_fraction: f64,
    pub sharp_noise: f64,
    pub blurred_noise: f64,
    pub seed: u64,
}

impl Default for NurseryLikeConfig {
    fn default() -> Self {
        NurseryLikeConfig {
            n: 2000,
            group1_fraction: 0.75,
            sharp_noise: 0.5,
            blurred_noise: 2.0,
            seed: 0,
        }
    }
}

pub const NURSERY_CLASSES: [&str; 4] = ["not_recom", "very_recom", "priority", "spec_prior"];
const HOUSING: [&str; 3] = ["convenient", "less_conv", "critical"];
const CHILDREN: [&str; 4] = ["1", "2", "3", "more"];

pub fn nursery_like_table(config: &NurseryLikeConfig) -> Result<(Table, Schema)> {
    if config.n == 0 {
        return Err(Error::Config("fixture n must be positive".into()));
    }
    if !(config.group1_fraction > 0.0 && config.group1_fraction < 1.0) {
        return Err(Error::Config("group-1 proportion outside (0, 1)".into()));
    }
    let mut rng = stream_rng(config.seed, 0);
    let mut rows = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let convenient = rng.random::<f64>() < config.group1_fraction;
        let class = rng.random_range(0..NURSERY_CLASSES.len());
        let center = class as f64;
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let (s_parents, s_social) = if convenient {
            (config.sharp_noise, config.blurred_noise)
        } else {
            (config.blurred_noise, config.sharp_noise)
        };
        let parents = center + s_parents * e1;
        let social = center + s_social * e2;
        let housing_probs: [f64; 3] = if class < 2 {
            [0.2, 0.3, 0.5]
        } else {
            [0.5, 0.3, 0.2]
        };
        let u: f64 = rng.random();
        let housing = if u < housing_probs[0] {
            0
        } else if u < housing_probs[0] + housing_probs[1] {
            1
        } else {
            2
        };
        let children = rng.random_range(0..CHILDREN.len());
        rows.push(vec![
            format!("{parents:.4}"),
            format!("{social:.4}"),
            HOUSING[housing].to_string(),
            CHILDREN[children].to_string(),
            if convenient { "convenient" } else { "inconvenient" }.to_string(),
            NURSERY_CLASSES[class].to_string(),
        ]);
    }
    let headers = ["parents_score", "social_score", "housing", "children", "finance", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let schema = Schema {
        task: Task::Classification,
        features: vec![
            FeatureColumn::numeric("parents_score"),
            FeatureColumn::numeric("social_score"),
            FeatureColumn::categorical("housing", &HOUSING),
            FeatureColumn::categorical("children", &CHILDREN),
        ],
        attribute: AttributeColumn::binary("finance", "convenient", "inconvenient"),
        response: ResponseColumn {
            name: "label".into(),
            classes: Some(NURSERY_CLASSES.iter().map(|s| s.to_string()).collect()),
        },
    };
    Ok((Table { headers, rows }, schema))
}
