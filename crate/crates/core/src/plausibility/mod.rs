//! Plausibility scores `s(x)` (smaller is more plausible) and their MILP
//! encodings `s(x) <= tau`.

mod chow_liu;
mod grid;
mod iforest;
mod leaf_support;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chow_liu::{ChowLiuModel, RootRule};
pub use grid::{lower_quantile, round_to_nearest, BinGrid};
pub use iforest::{average_path_length, IsoNode, IsolationForestModel};
pub use leaf_support::LeafSupportModel;

use crate::conformal::Threshold;
use crate::dataio::Dataset;
use crate::ensemble::{Ensemble, ThresholdIndex};
use crate::milp::{MilpModel, Relation, VarId};

#[derive(Debug, Error)]
pub enum PlausibilityError {
    #[error("no feature has a split threshold; the bin grid cannot be grounded")]
    NoThresholds,
    #[error("every feature is excluded from the bin grid")]
    DegenerateGrid,
    #[error("too few samples: need at least {needed}, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid score model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("threshold {threshold} of feature {feature} is not in the oracle's threshold index")]
    UngroundedThreshold { feature: usize, threshold: f64 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    ChowLiu,
    LeafSupport,
    IsolationForest,
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "chowliu" | "cl" => Ok(ScoreKind::ChowLiu),
            "leafsupport" | "ls" => Ok(ScoreKind::LeafSupport),
            "iforest" | "isolationforest" | "if" => Ok(ScoreKind::IsolationForest),
            _ => Err(format!(
                "unknown score kind '{s}' (expected chowliu, leafsupport or iforest)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub bins: usize,
    pub beta: f64,
    pub root_rule: RootRule,
    pub if_trees: usize,
    pub if_max_samples: usize,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            bins: 4,
            beta: 1.0,
            root_rule: RootRule::MaxDegree,
            if_trees: 30,
            if_max_samples: 256,
            seed: 0,
        }
    }
}

/// Variables of an oracle MILP that score encoders attach to.
pub struct EncodeContext<'a> {
    pub theta: &'a ThresholdIndex,
    /// `mu[j][k] = 1` iff `x_j <= theta.thresholds(j)[k]`.
    pub mu: &'a [Vec<VarId>],
    /// `z[m][l] = 1` iff tree `m` routes to leaf `l`.
    pub leaf_vars: &'a [Vec<VarId>],
}

impl EncodeContext<'_> {
    pub fn mu_at(&self, feature: usize, threshold: f64) -> Result<VarId, PlausibilityError> {
        self.theta
            .position(feature, threshold)
            .map(|k| self.mu[feature][k])
            .ok_or(PlausibilityError::UngroundedThreshold { feature, threshold })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    ChowLiu(ChowLiuModel),
    LeafSupport(LeafSupportModel),
    IsolationForest(IsolationForestModel),
}

impl ScoreModel {
    pub fn fit(
        kind: ScoreKind,
        cfg: &ScoreConfig,
        e: &Ensemble,
        fit: &Dataset,
    ) -> Result<Self, PlausibilityError> {
        if fit.n_features() != e.n_features() {
            return Err(PlausibilityError::DimensionMismatch {
                expected: e.n_features(),
                found: fit.n_features(),
            });
        }
        Ok(match kind {
            ScoreKind::ChowLiu => {
                let theta = ThresholdIndex::from_ensemble(e, None);
                let grid = BinGrid::build(fit, cfg.bins, &theta)?;
                ScoreModel::ChowLiu(ChowLiuModel::fit(fit, grid, cfg.beta, cfg.root_rule)?)
            }
            ScoreKind::LeafSupport => {
                ScoreModel::LeafSupport(LeafSupportModel::fit(e, fit, cfg.beta)?)
            }
            ScoreKind::IsolationForest => ScoreModel::IsolationForest(IsolationForestModel::fit(
                fit,
                cfg.if_trees,
                cfg.if_max_samples,
                cfg.seed,
            )?),
        })
    }

    pub fn kind(&self) -> ScoreKind {
        match self {
            ScoreModel::ChowLiu(_) => ScoreKind::ChowLiu,
            ScoreModel::LeafSupport(_) => ScoreKind::LeafSupport,
            ScoreModel::IsolationForest(_) => ScoreKind::IsolationForest,
        }
    }

    pub fn score(&self, e: &Ensemble, x: &[f64]) -> f64 {
        match self {
            ScoreModel::ChowLiu(m) => m.score(x),
            ScoreModel::LeafSupport(m) => m.score(e, x),
            ScoreModel::IsolationForest(m) => m.score(x),
        }
    }

    pub fn scores(&self, e: &Ensemble, ds: &Dataset) -> Vec<f64> {
        ds.rows().iter().map(|x| self.score(e, x)).collect()
    }

    /// Thresholds that must be in the oracle's index for the encoding to be
    /// exact.
    pub fn extra_thresholds(&self, n_features: usize) -> Vec<Vec<f64>> {
        match self {
            ScoreModel::ChowLiu(m) => m.grid().as_thresholds(),
            ScoreModel::LeafSupport(_) => vec![Vec::new(); n_features],
            ScoreModel::IsolationForest(m) => m.thresholds(),
        }
    }

    /// Add `s(x) <= tau` to an oracle MILP. An unbounded threshold adds
    /// nothing.
    pub fn encode(
        &self,
        model: &mut MilpModel,
        ctx: &EncodeContext,
        tau: Threshold,
    ) -> Result<(), PlausibilityError> {
        if tau.is_unbounded() {
            return Ok(());
        }
        match self {
            ScoreModel::ChowLiu(m) => {
                let q = bin_indicators(model, ctx, m.grid())?;
                m.encode_with_bins(model, tau, &q);
                Ok(())
            }
            ScoreModel::LeafSupport(m) => m.encode(model, ctx.leaf_vars, tau),
            ScoreModel::IsolationForest(m) => m.encode(model, ctx, tau),
        }
    }

    /// Check internal invariants and, when given, consistency with the
    /// ensemble the score was fitted for.
    pub fn validate(&self, e: Option<&Ensemble>) -> Result<(), PlausibilityError> {
        let p = match self {
            ScoreModel::ChowLiu(m) => {
                m.validate()?;
                Some(m.grid().n_features())
            }
            ScoreModel::LeafSupport(m) => {
                if let Some(e) = e {
                    m.check_against(e)?;
                }
                m.validate()?;
                None
            }
            ScoreModel::IsolationForest(m) => {
                m.validate()?;
                Some(m.n_features())
            }
        };
        if let (Some(p), Some(e)) = (p, e) {
            if p != e.n_features() {
                return Err(PlausibilityError::DimensionMismatch {
                    expected: e.n_features(),
                    found: p,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, PlausibilityError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PlausibilityError> {
        let m: Self = serde_json::from_str(text)?;
        m.validate(None)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PlausibilityError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlausibilityError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One-hot bin indicators for every included feature of the grid, tied to
/// the interval variables: `q_{j,b} = mu(k_b) - mu(k_{b-1})` with
/// `mu(-inf) = 0` and `mu(+inf) = 1`.
pub fn bin_indicators(
    model: &mut MilpModel,
    ctx: &EncodeContext,
    grid: &BinGrid,
) -> Result<Vec<Vec<VarId>>, PlausibilityError> {
    let mut q = vec![Vec::new(); grid.n_features()];
    for j in grid.included() {
        let bounds = grid.boundaries(j);
        let mus = bounds
            .iter()
            .map(|t| ctx.mu_at(j, *t))
            .collect::<Result<Vec<_>, _>>()?;
        for b in 0..grid.n_bins(j) {
            let v = model.add_binary(&format!("q_{j}_{b}"));
            let mut terms = vec![(v, 1.0)];
            let mut rhs = 0.0;
            match mus.get(b) {
                Some(up) => terms.push((*up, -1.0)),
                None => rhs = 1.0,
            }
            if b > 0 {
                terms.push((mus[b - 1], 1.0));
            }
            model.add_constraint(&format!("qdef_{j}_{b}"), terms, Relation::Eq, rhs);
            q[j].push(v);
        }
        let sum = q[j].iter().map(|v| (*v, 1.0)).collect();
        model.add_constraint(&format!("qsum_{j}"), sum, Relation::Eq, 1.0);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_kind_parsing() {
        assert_eq!("chowliu".parse::<ScoreKind>().unwrap(), ScoreKind::ChowLiu);
        assert_eq!(
            "leaf-support".parse::<ScoreKind>().unwrap(),
            ScoreKind::LeafSupport
        );
        assert_eq!(
            "iforest".parse::<ScoreKind>().unwrap(),
            ScoreKind::IsolationForest
        );
        assert!("kde".parse::<ScoreKind>().is_err());
    }
}
