//! Weighted Monte Carlo estimators.

use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `Σ wᵢ fᵢ / Σ wᵢ` with the delete-one jackknife standard error.
pub fn jackknife_mean(values: &[f64], weights: &[f64]) -> Result<Estimate> {
    if values.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    if values.len() != weights.len() {
        return Err(CfsError::DimensionMismatch { expected: weights.len(), found: values.len() });
    }
    let mut sw = 0.0;
    let mut swf = 0.0;
    for (f, w) in values.iter().zip(weights) {
        sw += w;
        swf += w * f;
    }
    let mean = swf / sw;
    let k = values.len();
    if k < 2 {
        return Ok(Estimate { mean, std_error: 0.0 });
    }
    let loo: Vec<f64> = values.iter().zip(weights).map(|(f, w)| (swf - w * f) / (sw - w)).collect();
    let loo_mean = loo.iter().sum::<f64>() / k as f64;
    let ss: f64 = loo.iter().map(|t| (t - loo_mean) * (t - loo_mean)).sum();
    Ok(Estimate { mean, std_error: ((k - 1) as f64 / k as f64 * ss).sqrt() })
}

/// Log of the weighted mean of `exp(eᵢ)`, shifted by `max eᵢ` against
/// overflow; the error is the delta-method standard error of the logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMeanExp {
    pub value: f64,
    pub std_error: f64,
    /// Weighted mean of `exp(eᵢ − shift)`.
    pub scaled_mean: f64,
    pub shift: f64,
}

pub fn log_mean_exp(exponents: &[f64], weights: &[f64]) -> Result<LogMeanExp> {
    if exponents.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    if exponents.len() != weights.len() {
        return Err(CfsError::DimensionMismatch { expected: weights.len(), found: exponents.len() });
    }
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY || shift.is_nan() {
        return Err(CfsError::OverflowGuard);
    }
    let ys: Vec<f64> = exponents.iter().map(|e| (e - shift).exp()).collect();
    let mut sw = 0.0;
    let mut swy = 0.0;
    for (y, w) in ys.iter().zip(weights) {
        sw += w;
        swy += w * y;
    }
    let mean = swy / sw;
    let mut var = 0.0;
    for (y, w) in ys.iter().zip(weights) {
        let d = w * (y - mean);
        var += d * d;
    }
    let std_error = var.sqrt() / (sw * mean);
    Ok(LogMeanExp { value: shift + mean.ln(), std_error, scaled_mean: mean, shift })
}

/// Median of the absolute values (NaNs excluded); zero for an empty input.
pub fn median_abs(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Ordinary least squares `y ≈ intercept + slope · x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}
