//! Group-conditional split-conformal prediction sets.
//!
//! The score of a labelled row is `1 − Ŷ^y`. Within each group `a` the
//! threshold `Q_a` is the `⌈(n_a + 1)(1 − α)⌉`-th smallest calibration score,
//! and a new row in group `a` gets every label whose score is at most `Q_a`.
//! With exchangeable rows this covers the true label with probability at
//! least `1 − α` in each group separately. Sets may be empty.
//!
//! Labels are 0-based here; the CLI writes them the same way.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounding slack so that `(n + 1)(1 − α)` landing on an integer is not
/// pushed to the next index by floating-point error.
const INDEX_SLACK: f64 = 1e-9;

pub fn conformity_score(probs: &[f64], label: usize) -> f64 {
    1.0 - probs[label]
}

/// 1-based order-statistic index used for a group of size `n`.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    ((n as f64 + 1.0) * (1.0 - alpha) - INDEX_SLACK).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibrator {
    pub alpha: f64,
    /// `Q_0`, `Q_1`; `+∞` when the index exceeds the group size.
    #[serde(with = "thresholds")]
    pub thresholds: [f64; 2],
    pub counts: [usize; 2],
}

mod thresholds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    // JSON has no infinity, so an unbounded threshold is written as null.
    pub fn serialize<S: Serializer>(q: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = q.iter().map(|&x| x.is_finite().then_some(x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 2], D::Error> {
        let v = <[Option<f64>; 2]>::deserialize(d)?;
        Ok(v.map(|x| x.unwrap_or(f64::INFINITY)))
    }
}

fn check_rows(probs: &ArrayView2<f64>, a: &[u8], labels: Option<&[usize]>) -> Result<()> {
    let n = probs.nrows();
    if a.len() != n || labels.is_some_and(|l| l.len() != n) {
        return Err(Error::shape(format!("{n} rows"), format!("a: {}", a.len())));
    }
    if let Some(v) = a.iter().find(|&&v| v > 1) {
        return Err(Error::DegenerateAttribute(format!("attribute value {v} is not binary")));
    }
    if let Some(l) = labels.and_then(|l| l.iter().find(|&&l| l >= probs.ncols())) {
        return Err(Error::shape(format!("labels below {}", probs.ncols()), l));
    }
    Ok(())
}

/// Per-group thresholds from calibration rows.
pub fn calibrate(
    probs: &ArrayView2<f64>,
    a: &[u8],
    labels: &[usize],
    alpha: f64,
) -> Result<ConformalCalibrator> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    check_rows(probs, a, Some(labels))?;
    let mut thresholds = [0.0; 2];
    let mut counts = [0; 2];
    for group in 0..2u8 {
        let mut scores: Vec<f64> = (0..labels.len())
            .filter(|&i| a[i] == group)
            .map(|i| 1.0 - probs[[i, labels[i]]])
            .collect();
        if scores.is_empty() {
            return Err(Error::MissingGroup { group });
        }
        scores.sort_by(f64::total_cmp);
        let k = quantile_index(scores.len(), alpha);
        thresholds[group as usize] = if k > scores.len() {
            f64::INFINITY
        } else {
            scores[k - 1]
        };
        counts[group as usize] = scores.len();
    }
    Ok(ConformalCalibrator {
        alpha,
        thresholds,
        counts,
    })
}

impl ConformalCalibrator {
    pub fn threshold(&self, group: u8) -> f64 {
        self.thresholds[usize::from(group.min(1))]
    }

    /// Sorted labels `{y : 1 − Ŷ^y ≤ Q_a}`.
    pub fn predict_set(&self, probs: &[f64], group: u8) -> Vec<usize> {
        let q = self.threshold(group);
        (0..probs.len()).filter(|&y| 1.0 - probs[y] <= q).collect()
    }

    pub fn predict_sets(&self, probs: &ArrayView2<f64>, a: &[u8]) -> Result<Vec<Vec<usize>>> {
        check_rows(probs, a, None)?;
        Ok(probs
            .rows()
            .into_iter()
            .zip(a)
            .map(|(row, &g)| self.predict_set(&row.to_vec(), g))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: u8,
    pub rows: usize,
    pub coverage: f64,
    pub mean_size: f64,
    pub empty_fraction: f64,
}

/// Coverage, mean size and empty-set frequency per group.
pub fn summarize(sets: &[Vec<usize>], a: &[u8], labels: &[usize]) -> Result<Vec<GroupSummary>> {
    if sets.len() != a.len() || labels.len() != a.len() {
        return Err(Error::shape(a.len(), format!("sets: {}, labels: {}", sets.len(), labels.len())));
    }
    Ok((0..2u8)
        .filter_map(|group| {
            let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] == group).collect();
            if rows.is_empty() {
                return None;
            }
            let n = rows.len() as f64;
            let covered = rows.iter().filter(|&&i| sets[i].contains(&labels[i])).count();
            let size: usize = rows.iter().map(|&i| sets[i].len()).sum();
            let empty = rows.iter().filter(|&&i| sets[i].is_empty()).count();
            Some(GroupSummary {
                group,
                rows: rows.len(),
                coverage: covered as f64 / n,
                mean_size: size as f64 / n,
                empty_fraction: empty as f64 / n,
            })
        })
        .collect())
}
