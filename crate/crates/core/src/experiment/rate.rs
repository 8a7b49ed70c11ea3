//! Fitting decay rates against the schedule ratio `λ_k/γ_k`.

use crate::error::{Error, Result};
use crate::seeker::Schedules;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateModel {
    /// `metric_k ≈ C·λ_k/γ_k`.
    LambdaOverGamma,
    /// `metric_k ≈ C·(λ_k/γ_k)²`.
    LambdaOverGammaSq,
}

impl RateModel {
    pub fn exponent(self) -> i32 {
        match self {
            RateModel::LambdaOverGamma => 1,
            RateModel::LambdaOverGammaSq => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateModel::LambdaOverGamma => "lambda_over_gamma",
            RateModel::LambdaOverGammaSq => "lambda_over_gamma_sq",
        }
    }

    pub fn basis(self, s: &Schedules, k: usize) -> f64 {
        (s.lambda(k) / s.gamma(k)).powi(self.exponent())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub model: RateModel,
    /// Least-squares constant `C`.
    pub c: f64,
    /// `‖metric − C·basis‖ / ‖metric‖` over the window.
    pub residual: f64,
    /// Extremes of `metric_k / basis_k` over the window.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub points: usize,
}

/// Fits `metric_k = C·basis_k` over the samples with `lo ≤ k ≤ hi`.
pub fn fit_rate(
    metric: &[f64],
    ks: &[usize],
    s: &Schedules,
    model: RateModel,
    window: (usize, usize),
) -> Result<RateFit> {
    if metric.len() != ks.len() {
        return Err(Error::DimensionMismatch { expected: ks.len(), actual: metric.len() });
    }
    let pts: Vec<(f64, f64)> = ks
        .iter()
        .zip(metric)
        .filter(|(k, _)| **k >= window.0 && **k <= window.1)
        .map(|(&k, &m)| (m, model.basis(s, k)))
        .collect();
    if pts.len() < 2 {
        return Err(Error::param("metric", format!("only {} samples inside the window", pts.len())));
    }
    if pts.iter().any(|(m, b)| !(m.is_finite() && *m >= 0.0 && b.is_finite() && *b > 0.0)) {
        return Err(Error::param("metric", "samples must be finite and nonnegative"));
    }
    let norm2: f64 = pts.iter().map(|(m, _)| m * m).sum();
    if norm2 == 0.0 {
        return Err(Error::param("metric", "sequence is identically zero"));
    }
    let c = pts.iter().map(|(m, b)| m * b).sum::<f64>() / pts.iter().map(|(_, b)| b * b).sum::<f64>();
    let residual = (pts.iter().map(|(m, b)| (m - c * b).powi(2)).sum::<f64>() / norm2).sqrt();
    let ratios = pts.iter().map(|(m, b)| m / b);
    let min_ratio = ratios.clone().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.fold(0.0, f64::max);
    Ok(RateFit { model, c, residual, min_ratio, max_ratio, points: pts.len() })
}
