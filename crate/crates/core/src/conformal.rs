//! Split-conformal calibration of the in-distribution threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    AlphaOutOfRange(f64),
    #[error("calibration scores must be finite")]
    NonFiniteScore,
}

/// A score threshold; `Unbounded` admits every point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Unbounded,
}

/// Slack for `s <= tau` so that a score recomputed through a different
/// summation order is not rejected by rounding.
pub const ADMIT_EPS: f64 = 1e-12;

impl Threshold {
    pub fn admits(self, score: f64) -> bool {
        match self {
            Threshold::Unbounded => true,
            Threshold::Finite(t) => score <= t + ADMIT_EPS * t.abs().max(1.0),
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Threshold::Unbounded)
    }

    pub fn value(self) -> f64 {
        match self {
            Threshold::Finite(t) => t,
            Threshold::Unbounded => f64::INFINITY,
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Finite(t) => s.serialize_f64(*t),
            Threshold::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(Threshold::Finite(t)),
            Raw::Text(s) if s == "inf" || s == "+inf" => Ok(Threshold::Unbounded),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("invalid threshold '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha: f64,
    pub n: usize,
    /// 1-based order index; `n + 1` means the threshold is unbounded.
    pub k: usize,
    pub tau: Threshold,
    pub sorted_scores: Vec<f64>,
}

/// `k = ceil((n + 1)(1 - alpha))`, clamped to `[1, n + 1]`.
///
/// The product is formed in floating point; a relative nudge of 1e-9 keeps
/// values such as `5 * 0.8 = 4.000000000000001` from rounding up to 5.
pub fn order_index(n: usize, alpha: f64) -> usize {
    let raw = (n as f64 + 1.0) * (1.0 - alpha);
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n + 1)
}

pub fn calibrate(scores: &[f64], alpha: f64) -> Result<CalibrationResult, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyCalibrationSet);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::AlphaOutOfRange(alpha));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ConformalError::NonFiniteScore);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = order_index(n, alpha);
    let tau = if k > n {
        Threshold::Unbounded
    } else {
        Threshold::Finite(sorted[k - 1])
    };
    Ok(CalibrationResult {
        alpha,
        n,
        k,
        tau,
        sorted_scores: sorted,
    })
}
