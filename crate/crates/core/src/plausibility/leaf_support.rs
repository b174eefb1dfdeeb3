use serde::{Deserialize, Serialize};

use super::PlausibilityError;
use crate::conformal::Threshold;
use crate::dataio::Dataset;
use crate::ensemble::Ensemble;
use crate::milp::{MilpModel, Relation, VarId};

/// Per-leaf cost `a = -log p` from smoothed leaf visitation frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSupportModel {
    beta: f64,
    counts: Vec<Vec<usize>>,
    costs: Vec<Vec<f64>>,
}

impl LeafSupportModel {
    pub fn fit(e: &Ensemble, fit: &Dataset, beta: f64) -> Result<Self, PlausibilityError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(PlausibilityError::InvalidParameter(
                "beta must be positive".into(),
            ));
        }
        if fit.n_features() != e.n_features() {
            return Err(PlausibilityError::DimensionMismatch {
                expected: e.n_features(),
                found: fit.n_features(),
            });
        }
        let mut counts: Vec<Vec<usize>> = e.trees().iter().map(|t| vec![0; t.n_leaves()]).collect();
        for x in fit.rows() {
            for (m, t) in e.trees().iter().enumerate() {
                counts[m][t.leaf_of(x)] += 1;
            }
        }
        Ok(Self::from_counts(counts, beta))
    }

    pub fn from_counts(counts: Vec<Vec<usize>>, beta: f64) -> Self {
        let costs = counts
            .iter()
            .map(|c| {
                let total: usize = c.iter().sum();
                let denom = total as f64 + beta * c.len() as f64;
                c.iter()
                    .map(|&n| -((n as f64 + beta) / denom).ln())
                    .collect()
            })
            .collect();
        Self {
            beta,
            counts,
            costs,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn probabilities(&self, m: usize) -> Vec<f64> {
        self.costs[m].iter().map(|a| (-a).exp()).collect()
    }

    pub fn score(&self, e: &Ensemble, x: &[f64]) -> f64 {
        e.trees()
            .iter()
            .enumerate()
            .map(|(m, t)| self.costs[m][t.leaf_of(x)])
            .sum()
    }

    pub fn score_leaves(&self, leaves: &[usize]) -> f64 {
        leaves
            .iter()
            .enumerate()
            .map(|(m, &l)| self.costs[m][l])
            .sum()
    }

    pub fn validate(&self) -> Result<(), PlausibilityError> {
        if self.beta.is_nan() || self.beta <= 0.0 || self.counts.len() != self.costs.len() {
            return Err(PlausibilityError::InvalidModel(
                "leaf support tables are inconsistent".into(),
            ));
        }
        for (m, (c, a)) in self.counts.iter().zip(&self.costs).enumerate() {
            let total: f64 = a.iter().map(|v| (-v).exp()).sum();
            if c.len() != a.len() || a.iter().any(|v| !v.is_finite()) || (total - 1.0).abs() > 1e-9
            {
                return Err(PlausibilityError::InvalidModel(format!(
                    "leaf probabilities of tree {m} do not form a distribution"
                )));
            }
        }
        Ok(())
    }

    pub fn check_against(&self, e: &Ensemble) -> Result<(), PlausibilityError> {
        let ok = self.costs.len() == e.n_trees()
            && self
                .costs
                .iter()
                .zip(e.trees())
                .all(|(a, t)| a.len() == t.n_leaves());
        if ok {
            Ok(())
        } else {
            Err(PlausibilityError::InvalidModel(
                "leaf support tables do not match the ensemble's leaves".into(),
            ))
        }
    }

    /// `sum a_{m,l} z_{m,l} <= tau` over the oracle's leaf indicators.
    pub fn encode(
        &self,
        model: &mut MilpModel,
        leaf_vars: &[Vec<VarId>],
        tau: Threshold,
    ) -> Result<(), PlausibilityError> {
        let Threshold::Finite(tau) = tau else {
            return Ok(());
        };
        if leaf_vars.len() != self.costs.len() {
            return Err(PlausibilityError::DimensionMismatch {
                expected: self.costs.len(),
                found: leaf_vars.len(),
            });
        }
        let mut terms = Vec::new();
        for (vars, a) in leaf_vars.iter().zip(&self.costs) {
            if vars.len() != a.len() {
                return Err(PlausibilityError::DimensionMismatch {
                    expected: a.len(),
                    found: vars.len(),
                });
            }
            terms.extend(vars.iter().copied().zip(a.iter().copied()));
        }
        model.add_constraint("ls_score", terms, Relation::Le, tau);
        Ok(())
    }
}
