//! Central finite differences for checking analytic gradients.

use crate::error::Result;

/// `∂f/∂θ_j ≈ (f(θ + h e_j) − f(θ − h e_j)) / 2h` for every coordinate.
pub fn numeric_gradient<F>(params: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        theta[j] = params[j] + h;
        let up = f(&theta)?;
        theta[j] = params[j] - h;
        let down = f(&theta)?;
        theta[j] = params[j];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
