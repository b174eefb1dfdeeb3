//! Brute-force ground truth: exhaustive cell scans and enumeration of the
//! Chow-Liu state set `A_tau`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::Threshold;
use crate::ensemble::{Ensemble, ThresholdIndex};
use crate::oracle::reconstruct_point;
use crate::plausibility::{ChowLiuModel, ScoreModel};

pub const DEFAULT_CELL_CAP: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("{cells} cells exceed the cap of {cap}")]
    TooManyCells { cells: String, cap: u128 },
    #[error("weight vector has {found} entries, ensemble has {expected} trees")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Mixed-radix walk over every cell of a threshold index.
pub struct CellIterator<'a> {
    theta: &'a ThresholdIndex,
    cursor: Option<Vec<usize>>,
}

impl<'a> CellIterator<'a> {
    pub fn new(theta: &'a ThresholdIndex) -> Self {
        Self {
            theta,
            cursor: Some(vec![0; theta.n_features()]),
        }
    }
}

impl Iterator for CellIterator<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let cur = self.cursor.take()?;
        let mut nxt = cur.clone();
        for j in (0..nxt.len()).rev() {
            nxt[j] += 1;
            if nxt[j] < self.theta.n_intervals(j) {
                self.cursor = Some(nxt);
                return Some(cur);
            }
            nxt[j] = 0;
        }
        Some(cur)
    }
}

fn decode(theta: &ThresholdIndex, mut idx: u64) -> Vec<usize> {
    let mut out = vec![0; theta.n_features()];
    for j in (0..out.len()).rev() {
        let r = theta.n_intervals(j) as u64;
        out[j] = (idx % r) as usize;
        idx /= r;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementCell {
    pub intervals: Vec<usize>,
    pub x: Vec<f64>,
    pub original_class: usize,
    pub pruned_class: usize,
    pub score: Option<f64>,
}

/// Index the exhaustive check scans: the ensemble's thresholds plus those of
/// an active score, matching the oracle's index.
pub fn scan_index(e: &Ensemble, region: Option<(&ScoreModel, Threshold)>) -> ThresholdIndex {
    let extra = region
        .filter(|(_, t)| !t.is_unbounded())
        .map(|(s, _)| s.extra_thresholds(e.n_features()));
    ThresholdIndex::from_ensemble(e, extra.as_deref())
}

/// Every cell whose representative is classified differently by `w0` and
/// `w` (and, with a region, has score at most tau).
pub fn check_equivalence_exhaustive(
    e: &Ensemble,
    w0: &[f64],
    w: &[f64],
    region: Option<(&ScoreModel, Threshold)>,
    cap: u128,
) -> Result<Vec<DisagreementCell>, VerifyError> {
    for v in [w0, w] {
        if v.len() != e.n_trees() {
            return Err(VerifyError::DimensionMismatch {
                expected: e.n_trees(),
                found: v.len(),
            });
        }
    }
    let theta = scan_index(e, region);
    let n = theta
        .n_cells()
        .filter(|n| *n <= cap)
        .ok_or_else(|| VerifyError::TooManyCells {
            cells: theta
                .n_cells()
                .map_or("more than 2^128".into(), |n| n.to_string()),
            cap,
        })?;
    let found: Vec<DisagreementCell> = (0..n as u64)
        .into_par_iter()
        .filter_map(|idx| {
            let intervals = decode(&theta, idx);
            let x = reconstruct_point(&theta, &intervals);
            let leaves = e.leaves_of(&x);
            let c0 = e.class_from_leaves(w0, &leaves);
            let c1 = e.class_from_leaves(w, &leaves);
            if c0 == c1 {
                return None;
            }
            let score = region.map(|(s, _)| s.score(e, &x));
            if let (Some((_, tau)), Some(s)) = (region, score) {
                if !tau.admits(s) {
                    return None;
                }
            }
            Some(DisagreementCell {
                intervals,
                x,
                original_class: c0,
                pruned_class: c1,
                score,
            })
        })
        .collect();
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSet {
    /// Bin index per feature (0 for excluded features) with its score.
    pub states: Vec<(Vec<usize>, f64)>,
}

impl StateSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// All discretized states with `-log p_CL <= tau`, by depth-first search in
/// root-to-leaf order. A branch is cut when its partial score plus the
/// smallest possible term of every remaining feature exceeds tau.
pub fn enumerate_a_tau(m: &ChowLiuModel, tau: f64) -> StateSet {
    let order = m.order();
    let p = m.grid().n_features();
    let min_term: Vec<f64> = order
        .iter()
        .map(|&j| match m.parent(j) {
            None => m
                .root_table()
                .iter()
                .map(|v| -v.ln())
                .fold(f64::INFINITY, f64::min),
            Some(_) => m
                .cond_table(j)
                .iter()
                .flatten()
                .map(|v| -v.ln())
                .fold(f64::INFINITY, f64::min),
        })
        .collect();
    // rest[d] = sum of minimum terms for positions d.. of the order.
    let mut rest = vec![0.0; order.len() + 1];
    for d in (0..order.len()).rev() {
        rest[d] = rest[d + 1] + min_term[d];
    }
    let slack = 1e-12 * tau.abs().max(1.0);
    let mut out = Vec::new();
    let mut state = vec![0usize; p];

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        m: &ChowLiuModel,
        order: &[usize],
        rest: &[f64],
        tau: f64,
        slack: f64,
        d: usize,
        acc: f64,
        state: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if acc + rest[d] > tau + slack {
            return;
        }
        if d == order.len() {
            out.push((state.clone(), acc));
            return;
        }
        let j = order[d];
        for b in 0..m.grid().n_bins(j) {
            let term = m.term(j, m.parent(j).map(|i| state[i]), b);
            state[j] = b;
            dfs(m, order, rest, tau, slack, d + 1, acc + term, state, out);
        }
        state[j] = 0;
    }

    dfs(m, &order, &rest, tau, slack, 0, 0.0, &mut state, &mut out);
    StateSet { states: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBound {
    pub count: usize,
    pub bound: f64,
    pub holds: bool,
}

/// `|A_tau| <= e^tau`.
pub fn check_state_bound(m: &ChowLiuModel, tau: f64) -> StateBound {
    let count = enumerate_a_tau(m, tau).len();
    let bound = tau.exp();
    StateBound {
        count,
        bound,
        holds: count as f64 <= bound * (1.0 + 1e-12),
    }
}
