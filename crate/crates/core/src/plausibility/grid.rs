use serde::{Deserialize, Serialize};

use super::PlausibilityError;
use crate::dataio::Dataset;
use crate::ensemble::ThresholdIndex;

/// Per-feature bin boundaries, each one a split threshold of the ensemble.
///
/// Bin `b` of feature `j` is `(k_{b-1}, k_b]` with `k_{-1} = -inf` and
/// `k_{B_j-1} = +inf`; a value equal to a boundary falls in the lower bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    boundaries: Vec<Vec<f64>>,
}

/// Nearest element of a sorted, non-empty list; ties go to the larger value.
pub fn round_to_nearest(sorted: &[f64], x: f64) -> f64 {
    let pos = sorted.partition_point(|t| *t < x);
    if pos == 0 {
        return sorted[0];
    }
    if pos == sorted.len() {
        return sorted[pos - 1];
    }
    let (lo, hi) = (sorted[pos - 1], sorted[pos]);
    if x - lo < hi - x {
        lo
    } else {
        hi
    }
}

/// Lower-interpolation quantile: the order statistic at 1-based index
/// `ceil(b * n / B)` of the sorted values.
pub fn lower_quantile(sorted: &[f64], b: usize, bins: usize) -> f64 {
    let n = sorted.len();
    let k = (b * n).div_ceil(bins).max(1);
    sorted[k - 1]
}

impl BinGrid {
    pub fn from_boundaries(boundaries: Vec<Vec<f64>>) -> Result<Self, PlausibilityError> {
        for (j, list) in boundaries.iter().enumerate() {
            if list.iter().any(|t| !t.is_finite()) || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PlausibilityError::InvalidModel(format!(
                    "boundaries of feature {j} must be finite and strictly increasing"
                )));
            }
        }
        Ok(Self { boundaries })
    }

    /// Quantile boundaries at `b/B`, each rounded to the nearest threshold of
    /// the feature. Features without thresholds become a single excluded bin.
    pub fn build(
        fit: &Dataset,
        bins: usize,
        theta: &ThresholdIndex,
    ) -> Result<Self, PlausibilityError> {
        if bins < 2 {
            return Err(PlausibilityError::InvalidParameter(
                "B must be at least 2".into(),
            ));
        }
        if fit.is_empty() {
            return Err(PlausibilityError::InvalidParameter(
                "fit set is empty".into(),
            ));
        }
        if theta.n_features() != fit.n_features() {
            return Err(PlausibilityError::DimensionMismatch {
                expected: fit.n_features(),
                found: theta.n_features(),
            });
        }
        if (0..theta.n_features()).all(|j| theta.thresholds(j).is_empty()) {
            return Err(PlausibilityError::NoThresholds);
        }
        let boundaries = (0..fit.n_features())
            .map(|j| {
                let th = theta.thresholds(j);
                if th.is_empty() {
                    return Vec::new();
                }
                let mut col = fit.column(j);
                col.sort_by(f64::total_cmp);
                let mut out: Vec<f64> = (1..bins)
                    .map(|b| round_to_nearest(th, lower_quantile(&col, b, bins)))
                    .collect();
                out.sort_by(f64::total_cmp);
                out.dedup();
                out
            })
            .collect();
        Ok(Self { boundaries })
    }

    pub fn n_features(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self, j: usize) -> &[f64] {
        &self.boundaries[j]
    }

    pub fn n_bins(&self, j: usize) -> usize {
        self.boundaries[j].len() + 1
    }

    pub fn is_excluded(&self, j: usize) -> bool {
        self.boundaries[j].is_empty()
    }

    pub fn included(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&j| !self.is_excluded(j))
            .collect()
    }

    pub fn bin_of(&self, j: usize, x: f64) -> usize {
        self.boundaries[j].partition_point(|t| *t < x)
    }

    pub fn discretize(&self, x: &[f64]) -> Vec<usize> {
        (0..self.n_features())
            .map(|j| self.bin_of(j, x[j]))
            .collect()
    }

    /// Boundaries as extra thresholds (they are already members of the
    /// ensemble's thresholds when built by [`BinGrid::build`]).
    pub fn as_thresholds(&self) -> Vec<Vec<f64>> {
        self.boundaries.clone()
    }
}
