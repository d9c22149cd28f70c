//! Degree-4 polynomial mapping RSS (dBm) to distance (m).
//!
//! `distance = p1·R⁴ + p2·R³ + p3·R² + p4·R + p5`
//!
//! Raw RSS powers reach ~1e8 at −100 dBm, so the least-squares problem is
//! solved by Householder QR in the standardized variable `z = (R − mean)/std`
//! and the coefficients are expanded back to powers of `R` afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::RssSample;
use crate::metrics::{goodness_of_fit, FitReport, MetricsError};

/// Number of coefficients of the quartic.
pub const COEFFICIENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("only {distinct} distinct RSS values; a quartic needs 5")]
    RankDeficient { distinct: usize },
    #[error("sample at x = {x_m} m has no ground-truth distance")]
    MissingGroundTruth { x_m: f64 },
    #[error("non-finite input pair ({rss_dbm}, {distance_m})")]
    NonFinite { rss_dbm: f64, distance_m: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Quartic coefficients, highest power first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polynomial4 {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
}

impl Polynomial4 {
    pub const ZERO: Polynomial4 = Polynomial4 { p1: 0.0, p2: 0.0, p3: 0.0, p4: 0.0, p5: 0.0 };

    pub fn from_array(p: [f64; 5]) -> Self {
        Self { p1: p[0], p2: p[1], p3: p[2], p4: p[3], p5: p[4] }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.p1, self.p2, self.p3, self.p4, self.p5]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

/// Horner evaluation.
pub fn evaluate_poly4(poly: &Polynomial4, rss_dbm: f64) -> f64 {
    poly.to_array().iter().fold(0.0, |acc, c| acc * rss_dbm + c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInput {
    /// `(rss_dbm, distance_m)` pairs.
    pub pairs: Vec<(f64, f64)>,
    pub min_distance_m: f64,
}

impl FitInput {
    /// Smallest and largest RSS in the training pairs.
    pub fn rss_domain(&self) -> Option<(f64, f64)> {
        let mut it = self.pairs.iter().map(|p| p.0);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), r| (lo.min(r), hi.max(r))))
    }
}

/// Keeps one RSU's samples whose true distance is at least `cutoff_m`.
pub fn filter_near_field<'a, I>(samples: I, cutoff_m: f64) -> Result<FitInput, FitError>
where
    I: IntoIterator<Item = &'a RssSample>,
{
    let mut pairs = Vec::new();
    for s in samples {
        let d = s.true_distance_m.ok_or(FitError::MissingGroundTruth { x_m: s.x_m })?;
        if d >= cutoff_m {
            pairs.push((s.rss_dbm, d));
        }
    }
    if pairs.len() < COEFFICIENTS {
        return Err(FitError::TooFewSamples { need: COEFFICIENTS, have: pairs.len() });
    }
    Ok(FitInput { pairs, min_distance_m: cutoff_m })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least-squares quartic through the input pairs, with its goodness of fit.
pub fn fit_poly4(input: &FitInput) -> Result<(Polynomial4, FitReport), FitError> {
    let n = input.pairs.len();
    if n < COEFFICIENTS {
        return Err(FitError::TooFewSamples { need: COEFFICIENTS, have: n });
    }
    if let Some(&(r, d)) = input.pairs.iter().find(|(r, d)| !r.is_finite() || !d.is_finite()) {
        return Err(FitError::NonFinite { rss_dbm: r, distance_m: d });
    }
    let mut rss: Vec<f64> = input.pairs.iter().map(|p| p.0).collect();
    rss.sort_by(f64::total_cmp);
    rss.dedup();
    if rss.len() < COEFFICIENTS {
        return Err(FitError::RankDeficient { distinct: rss.len() });
    }

    let center = input.pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let spread = (input.pairs.iter().map(|p| (p.0 - center).powi(2)).sum::<f64>() / n as f64).sqrt();
    let vander = DMatrix::from_fn(n, COEFFICIENTS, |i, j| ((input.pairs[i].0 - center) / spread).powi(j as i32));
    let target = DVector::from_iterator(n, input.pairs.iter().map(|p| p.1));

    let qr = vander.qr();
    let r = qr.r();
    let max_diag = (0..COEFFICIENTS).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..COEFFICIENTS).any(|j| r[(j, j)].abs() <= 1e-12 * max_diag) {
        return Err(FitError::RankDeficient { distinct: rss.len() });
    }
    let qtb = qr.q().transpose() * &target;
    let q = r.solve_upper_triangular(&qtb).ok_or(FitError::RankDeficient { distinct: rss.len() })?;

    // Σ_j q_j ((R − c)/s)^j expanded into powers of R.
    let mut raw = [0.0f64; COEFFICIENTS];
    for (j, qj) in q.iter().enumerate() {
        let scaled = qj / spread.powi(j as i32);
        for (i, slot) in raw.iter_mut().enumerate().take(j + 1) {
            *slot += scaled * binomial(j, i) * (-center).powi((j - i) as i32);
        }
    }
    let poly = Polynomial4 { p1: raw[4], p2: raw[3], p3: raw[2], p4: raw[1], p5: raw[0] };

    let actual: Vec<f64> = input.pairs.iter().map(|p| p.1).collect();
    let predicted: Vec<f64> = input.pairs.iter().map(|p| evaluate_poly4(&poly, p.0)).collect();
    let report = goodness_of_fit(&actual, &predicted, COEFFICIENTS)?;
    Ok((poly, report))
}
