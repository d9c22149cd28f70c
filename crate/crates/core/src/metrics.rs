//! Error and goodness-of-fit statistics.
//!
//! Conventions: error variance uses the `n − 1` denominator; fit RMSE and
//! adjusted R² use `n − k` residual degrees of freedom for a model with `k`
//! coefficients.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("series lengths differ: {actual} actual vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("need more than {need} samples, got {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("correlation undefined: a series is constant")]
    ZeroVariance,
    #[error("R² undefined: actual values are constant")]
    ZeroTotalVariance,
}

/// Prediction-error summary, in the units of the predicted quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub max_abs_error: f64,
    pub std_dev: f64,
    pub variance: f64,
    pub correlation: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub sse: f64,
    pub r_square: f64,
    pub adj_r_square: f64,
    pub rmse: f64,
    pub n: usize,
    pub k: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<(), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { actual: actual.len(), predicted: predicted.len() });
    }
    Ok(())
}

/// Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return Err(MetricsError::TooFewSamples { need: 1, have: a.len() });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Error statistics of `predicted` against `actual` (errors are
/// `predicted − actual`).
pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricsReport, MetricsError> {
    check_lengths(actual, predicted)?;
    let n = actual.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { need: 1, have: n });
    }
    let errors: Vec<f64> = predicted.iter().zip(actual).map(|(p, a)| p - a).collect();
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let max_abs_error = errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let e_bar = mean(&errors);
    let variance = errors.iter().map(|e| (e - e_bar).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MetricsReport {
        mse,
        max_abs_error,
        std_dev: variance.sqrt(),
        variance,
        correlation: pearson(actual, predicted)?,
        n,
    })
}

/// Residual standard error with `n − k` degrees of freedom.
pub fn rmse_from_sse(sse: f64, n: usize, k: usize) -> Result<f64, MetricsError> {
    if n <= k {
        return Err(MetricsError::TooFewSamples { need: k, have: n });
    }
    Ok((sse / (n - k) as f64).sqrt())
}

/// R² adjusted for `k` coefficients over `n` samples.
pub fn adjusted_r_square(r_square: f64, n: usize, k: usize) -> Result<f64, MetricsError> {
    if n <= k {
        return Err(MetricsError::TooFewSamples { need: k, have: n });
    }
    Ok(1.0 - (1.0 - r_square) * (n - 1) as f64 / (n - k) as f64)
}

pub fn goodness_of_fit(actual: &[f64], predicted: &[f64], k: usize) -> Result<FitReport, MetricsError> {
    check_lengths(actual, predicted)?;
    let n = actual.len();
    if n <= k {
        return Err(MetricsError::TooFewSamples { need: k, have: n });
    }
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    let m = mean(actual);
    let sst: f64 = actual.iter().map(|a| (a - m).powi(2)).sum();
    if sst == 0.0 {
        return Err(MetricsError::ZeroTotalVariance);
    }
    let r_square = 1.0 - sse / sst;
    Ok(FitReport {
        sse,
        r_square,
        adj_r_square: adjusted_r_square(r_square, n, k)?,
        rmse: rmse_from_sse(sse, n, k)?,
        n,
        k,
    })
}
