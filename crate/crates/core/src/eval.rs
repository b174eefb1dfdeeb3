//! Fidelity, coverage and compression metrics, and the post-hoc choice of
//! the miscoverage level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::Threshold;
use crate::dataio::Dataset;
use crate::ensemble::{support_size, Ensemble};
use crate::plausibility::ScoreModel;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("weight vector has {found} entries, ensemble has {expected} trees")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A rate that has no value when its denominator is zero. Serialized as a
/// number or the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Value(f64),
    Undefined,
}

impl Rate {
    pub fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Rate::Undefined
        } else {
            Rate::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Rate::Value(v) => Some(v),
            Rate::Undefined => None,
        }
    }
}

impl std::fmt::Display for Rate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rate::Value(v) => write!(f, "{v}"),
            Rate::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Rate::Value(v) => s.serialize_f64(*v),
            Rate::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rate::Value(v)),
            Raw::Text(s) if s == "undefined" => Ok(Rate::Undefined),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("invalid rate '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub matches: usize,
    pub in_region: usize,
    pub in_region_matches: usize,
    pub fidelity: f64,
    pub coverage: f64,
    pub conditional_fidelity: Rate,
    pub n_trees: usize,
    pub support: usize,
    pub pruning_rate: f64,
    /// `M / ||w||_0`; absent when every weight is zero.
    pub compression_ratio: Option<f64>,
    pub accuracy_original: Option<f64>,
    pub accuracy_pruned: Option<f64>,
}

/// Metrics from per-point predictions. `in_region[i]` tells whether test
/// point `i` lies in the certified region.
pub fn report_from_predictions(
    original: &[usize],
    pruned: &[usize],
    in_region: &[bool],
    labels: Option<&[usize]>,
    n_trees: usize,
    support: usize,
) -> Result<EvalReport, EvalError> {
    let n = original.len();
    if n == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    let matches = original.iter().zip(pruned).filter(|(a, b)| a == b).count();
    let in_reg = in_region.iter().filter(|v| **v).count();
    let in_reg_matches = (0..n)
        .filter(|&i| in_region[i] && original[i] == pruned[i])
        .count();
    let accuracy = |pred: &[usize]| {
        labels.map(|y| pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / n as f64)
    };
    Ok(EvalReport {
        n_test: n,
        matches,
        in_region: in_reg,
        in_region_matches: in_reg_matches,
        fidelity: matches as f64 / n as f64,
        coverage: in_reg as f64 / n as f64,
        conditional_fidelity: Rate::ratio(in_reg_matches, in_reg),
        n_trees,
        support,
        pruning_rate: 1.0 - support as f64 / n_trees as f64,
        compression_ratio: (support > 0).then(|| n_trees as f64 / support as f64),
        accuracy_original: accuracy(original),
        accuracy_pruned: accuracy(pruned),
    })
}

/// Evaluate pruned weights `w` against the ensemble's own weights on a test
/// set. Without a region every point counts as in-region.
pub fn evaluate(
    e: &Ensemble,
    w: &[f64],
    test: &Dataset,
    region: Option<(&ScoreModel, Threshold)>,
) -> Result<EvalReport, EvalError> {
    if w.len() != e.n_trees() {
        return Err(EvalError::DimensionMismatch {
            expected: e.n_trees(),
            found: w.len(),
        });
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if test.n_features() != e.n_features() {
        return Err(EvalError::DimensionMismatch {
            expected: e.n_features(),
            found: test.n_features(),
        });
    }
    let mut original = Vec::with_capacity(test.n_rows());
    let mut pruned = Vec::with_capacity(test.n_rows());
    let mut in_region = Vec::with_capacity(test.n_rows());
    for x in test.rows() {
        let leaves = e.leaves_of(x);
        original.push(e.class_from_leaves(e.weights(), &leaves));
        pruned.push(e.class_from_leaves(w, &leaves));
        in_region.push(region.is_none_or(|(s, tau)| tau.admits(s.score(e, x))));
    }
    report_from_predictions(
        &original,
        &pruned,
        &in_region,
        test.labels(),
        e.n_trees(),
        support_size(w),
    )
}

/// `P(X <= k)` for `X ~ Binomial(n, q)`, summed in log space.
fn binomial_cdf(k: usize, n: usize, q: f64) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    if q >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    let (lq, lp) = (q.ln(), (-q).ln_1p());
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for i in 0..=k.min(n) {
        if i > 0 {
            log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        total += (log_choose + i as f64 * lq + (n - i) as f64 * lp).exp();
    }
    total.min(1.0)
}

/// One-sided Clopper-Pearson upper bound: the `q` at which
/// `P(Binomial(n, q) <= k) = eta`, found by bisection to 1e-12.
pub fn clopper_pearson_upper(k: usize, n: usize, eta: f64) -> f64 {
    assert!(k <= n, "k must not exceed n");
    assert!(eta > 0.0 && eta < 1.0, "eta must lie in (0, 1)");
    if k == n {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(k, n, mid) > eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Selector {
    Empirical,
    ConfidenceBound { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCandidate {
    pub alpha: f64,
    /// Disagreements on the selection set.
    pub mismatches: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    Alpha(f64),
    /// No candidate qualifies; keep the unpruned ensemble.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub selector: Selector,
    pub rho_star: f64,
    pub candidates: Vec<AlphaCandidate>,
    /// Upper bounds used by the confidence-bound rule, per candidate.
    pub upper_bounds: Option<Vec<f64>>,
    pub chosen: AlphaChoice,
}

pub const SWEEP_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.6, 0.8];
pub const SELECTION_GRID: [f64; 8] = [0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95];
pub const DEFAULT_DELTA: f64 = 0.05;

/// Largest alpha whose selection-set fidelity (empirical) or Bonferroni
/// Clopper-Pearson mismatch bound (confidence-bound) meets `rho_star`.
pub fn select_alpha(
    candidates: &[AlphaCandidate],
    selector: Selector,
    rho_star: f64,
) -> Result<AlphaSelection, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if candidates.iter().any(|c| c.n == 0 || c.mismatches > c.n) {
        return Err(EvalError::InvalidParameter(
            "each candidate needs 0 <= K <= n and n > 0".into(),
        ));
    }
    let upper_bounds = match selector {
        Selector::Empirical => None,
        Selector::ConfidenceBound { delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(EvalError::InvalidParameter(format!(
                    "delta must lie in (0, 1), got {delta}"
                )));
            }
            let eta = delta / candidates.len() as f64;
            Some(
                candidates
                    .iter()
                    .map(|c| clopper_pearson_upper(c.mismatches, c.n, eta))
                    .collect::<Vec<_>>(),
            )
        }
    };
    let qualifies = |i: usize| {
        let c = &candidates[i];
        match &upper_bounds {
            None => (c.n - c.mismatches) as f64 >= rho_star * c.n as f64 - 1e-12,
            Some(u) => u[i] <= 1.0 - rho_star,
        }
    };
    let chosen = (0..candidates.len())
        .filter(|&i| qualifies(i))
        .map(|i| candidates[i].alpha)
        .max_by(f64::total_cmp)
        .map_or(AlphaChoice::Fallback, AlphaChoice::Alpha);
    Ok(AlphaSelection {
        selector,
        rho_star,
        candidates: candidates.to_vec(),
        upper_bounds,
        chosen,
    })
}

/// One row of a sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub seed: u64,
    pub method: String,
    pub alpha: Option<f64>,
    pub pruning_rate: f64,
    pub support: usize,
    pub fidelity: f64,
    pub coverage: f64,
    pub conditional_fidelity: Rate,
    pub accuracy_pruned: Option<f64>,
    pub accuracy_original: Option<f64>,
    pub time_s: f64,
    pub iterations: usize,
    pub certified: bool,
}
