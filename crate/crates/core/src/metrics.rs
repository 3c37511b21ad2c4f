//! Estimation-quality metrics over a coefficient time series: normalized
//! RMSE, coverage probability, normalized interval width and the combined
//! coverage-width criterion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("true series has zero norm")]
    ZeroNormTruth,
    #[error("true series has zero maximum magnitude")]
    ZeroMax,
    #[error("series lengths differ or are empty")]
    Length,
    #[error("negative half-width at step {0}")]
    NegativeWidth(usize),
}

/// True value, estimate and interval half-width of one coefficient per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalSeries<T> {
    pub truth: Vec<T>,
    pub hat: Vec<T>,
    pub half_width: Vec<T>,
}

impl<T: Scalar> IntervalSeries<T> {
    pub fn new(truth: Vec<T>, hat: Vec<T>, half_width: Vec<T>) -> Result<Self, MetricsError> {
        if truth.is_empty() || truth.len() != hat.len() || truth.len() != half_width.len() {
            return Err(MetricsError::Length);
        }
        if let Some(k) = half_width.iter().position(|&w| !(w >= T::zero())) {
            return Err(MetricsError::NegativeWidth(k));
        }
        Ok(Self { truth, hat, half_width })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn push(&mut self, truth: T, hat: T, half_width: T) {
        self.truth.push(truth);
        self.hat.push(hat);
        self.half_width.push(half_width);
    }
}

/// `‖truth − hat‖₂ / ‖truth‖₂`.
pub fn rmse<T: Scalar>(truth: &[T], hat: &[T]) -> Result<T, MetricsError> {
    if truth.is_empty() || truth.len() != hat.len() {
        return Err(MetricsError::Length);
    }
    let norm: T = truth.iter().map(|&t| t * t).sum::<T>().sqrt();
    if norm == T::zero() {
        return Err(MetricsError::ZeroNormTruth);
    }
    let err: T = truth.iter().zip(hat).map(|(&t, &h)| (t - h) * (t - h)).sum::<T>().sqrt();
    Ok(err / norm)
}

/// Fraction of steps with `|truth − hat| ≤ half_width`.
pub fn picp<T: Scalar>(series: &IntervalSeries<T>) -> T {
    let inside = (0..series.len())
        .filter(|&k| (series.truth[k] - series.hat[k]).abs() <= series.half_width[k])
        .count();
    T::lit(inside as f64) / T::lit(series.len() as f64)
}

/// `Σ 2ΔK / (M · K_max)` with `K_max` the largest true magnitude.
pub fn pinaw<T: Scalar>(series: &IntervalSeries<T>) -> Result<T, MetricsError> {
    let k_max = series.truth.iter().fold(T::zero(), |a, &t| a.max(t.abs()));
    if k_max == T::zero() {
        return Err(MetricsError::ZeroMax);
    }
    let total: T = series.half_width.iter().map(|&w| w + w).sum();
    Ok(total / (T::lit(series.len() as f64) * k_max))
}

/// Selects when the coverage term of the CWC is switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaConvention {
    /// `η = 1` when `PICP < α`, else 0: under-coverage is penalized.
    #[default]
    CoveragePenalty,
    /// `η = 0` when `PICP ≤ α`, else 1.
    Printed,
}

impl EtaConvention {
    pub fn eta<T: Scalar>(&self, picp: T, alpha: T) -> T {
        let on = match self {
            Self::CoveragePenalty => picp < alpha,
            Self::Printed => picp > alpha,
        };
        if on {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// `PINAW · (1 + η·PICP·e^{−ν(PICP − α)})`.
pub fn cwc<T: Scalar>(picp: T, pinaw: T, alpha: T, nu: T, convention: EtaConvention) -> T {
    let eta = convention.eta(picp, alpha);
    pinaw * (T::one() + eta * picp * (-(nu * (picp - alpha))).exp())
}

/// All four metrics of one coefficient series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rmse: f64,
    pub picp: f64,
    pub pinaw: f64,
    pub cwc: f64,
}

pub fn summarize<T: Scalar>(
    series: &IntervalSeries<T>,
    alpha: f64,
    nu: f64,
    convention: EtaConvention,
) -> Result<MetricSummary, MetricsError> {
    let r = rmse(&series.truth, &series.hat)?;
    let c = picp(series);
    let w = pinaw(series)?;
    let q = cwc(c, w, T::lit(alpha), T::lit(nu), convention);
    Ok(MetricSummary { rmse: r.to_f64_lossy(), picp: c.to_f64_lossy(), pinaw: w.to_f64_lossy(), cwc: q.to_f64_lossy() })
}
