//! Sparsest (L0) or minimal-L1 tree weights that keep the original
//! prediction on a finite set of points.

use std::collections::HashSet;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{support_size, Ensemble};
use crate::milp::{
    solve, solve_with_start, MilpError, MilpModel, Relation, Sense, SolveOptions, Status, VarId,
};

#[derive(Debug, Error)]
pub enum PrunerError {
    #[error("original weights violate the strict margin even at epsilon {0:e}")]
    InfeasibleAtEpsilon(f64),
    #[error("pruner stopped at a solver limit without a feasible point")]
    SolverUncertified,
    #[error("pruner model is infeasible")]
    Infeasible,
    #[error("pruned weights change the prediction of constraint point {0}")]
    EquivalenceViolated(usize),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneObjective {
    #[default]
    L0,
    L1,
}

impl std::str::FromStr for PruneObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l0" => Ok(PruneObjective::L0),
            "l1" => Ok(PruneObjective::L1),
            _ => Err(format!("unknown objective '{s}' (expected l0 or l1)")),
        }
    }
}

/// A point of the constraint set, kept only through the leaves it reaches
/// and its class under the original weights.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintPoint {
    pub leaves: Vec<usize>,
    pub class: usize,
}

impl ConstraintPoint {
    pub fn from_point(e: &Ensemble, x: &[f64]) -> Self {
        let leaves = e.leaves_of(x);
        let class = e.class_from_leaves(e.weights(), &leaves);
        Self { leaves, class }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunerSolution {
    pub weights: Vec<f64>,
    pub support: usize,
    pub objective_value: f64,
    pub status: Status,
    /// The objective is proven optimal for the given constraint set.
    pub optimal: bool,
    pub epsilon: f64,
    pub nodes: u64,
    pub wall_time_s: f64,
}

/// `1e-6 * max|v| * W_total`, with a floor for all-zero ensembles.
pub fn default_epsilon(e: &Ensemble) -> f64 {
    let eps = 1e-6 * e.max_abs_leaf() * e.total_weight();
    if eps > 0.0 {
        eps
    } else {
        1e-9
    }
}

/// One margin row `sum_m a_m w_m + offset >= 0` (or `>= eps` when `strict`).
/// Rows against a smaller class index are strict; under L1 every row on
/// which the original weights have a positive margin is strict too, since
/// there is no normalization to keep the weights away from zero.
#[derive(Debug, Clone)]
struct MarginRow {
    coef: Vec<f64>,
    offset: f64,
    strict: bool,
}

impl MarginRow {
    fn key(&self) -> (Vec<u64>, u64, bool) {
        (
            self.coef.iter().map(|v| v.to_bits()).collect(),
            self.offset.to_bits(),
            self.strict,
        )
    }

    /// Zero coefficients and non-negative offset: holds for every `w`.
    fn is_trivial(&self) -> bool {
        !self.strict && self.offset >= 0.0 && self.coef.iter().all(|a| *a == 0.0)
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.coef.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.offset
    }
}

fn margin_rows(
    e: &Ensemble,
    points: &[ConstraintPoint],
    objective: PruneObjective,
) -> Vec<MarginRow> {
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let bias = e.bias();
    for p in points {
        let c = p.class;
        for c2 in (0..e.n_classes()).filter(|&c2| c2 != c) {
            let coef: Vec<f64> = e
                .trees()
                .iter()
                .zip(&p.leaves)
                .map(|(t, &l)| {
                    let v = t.leaf_values(l);
                    v[c] - v[c2]
                })
                .collect();
            let mut row = MarginRow {
                coef,
                offset: bias[c] - bias[c2],
                strict: c2 < c,
            };
            if row.is_trivial() {
                continue;
            }
            if objective == PruneObjective::L1 && row.value(e.weights()) > 0.0 {
                row.strict = true;
            }
            if seen.insert(row.key()) {
                rows.push(row);
            }
        }
    }
    rows
}

/// Halve `eps` (at most 20 times) until the original weights satisfy every
/// strict margin on the constraint set.
pub fn effective_epsilon(
    e: &Ensemble,
    points: &[ConstraintPoint],
    objective: PruneObjective,
    eps: f64,
) -> Result<f64, PrunerError> {
    let rows = margin_rows(e, points, objective);
    let min_margin = rows
        .iter()
        .filter(|r| r.strict)
        .map(|r| r.value(e.weights()))
        .fold(f64::INFINITY, f64::min);
    let mut eps = eps;
    for _ in 0..=20 {
        if min_margin >= eps {
            return Ok(eps);
        }
        eps /= 2.0;
    }
    Err(PrunerError::InfeasibleAtEpsilon(eps * 2.0))
}

fn preserves(e: &Ensemble, points: &[ConstraintPoint], w: &[f64]) -> Option<usize> {
    points
        .iter()
        .position(|p| e.class_from_leaves(w, &p.leaves) != p.class)
}

fn add_margin_rows(model: &mut MilpModel, rows: &[MarginRow], w: &[VarId], eps: f64) {
    for r in rows {
        let terms: Vec<(VarId, f64)> = w.iter().copied().zip(r.coef.iter().copied()).collect();
        let rhs = -r.offset + if r.strict { eps } else { 0.0 };
        model.add_constraint("", terms, Relation::Ge, rhs);
    }
}

/// Re-solve on a fixed support, maximizing the smallest margin over all
/// rows (strict rows keep their epsilon), with the normalization kept.
/// Returns `None` when the LP fails.
fn polish(
    e: &Ensemble,
    rows: &[MarginRow],
    support: &[bool],
    eps: f64,
    opts: &SolveOptions,
) -> Option<Vec<f64>> {
    let total = e.total_weight();
    let mut model = MilpModel::new();
    let w: Vec<VarId> = support
        .iter()
        .enumerate()
        .map(|(m, &on)| model.add_continuous(&format!("w{m}"), 0.0, if on { total } else { 0.0 }))
        .collect();
    let cap = 2.0 * e.max_abs_leaf() * total + 1.0;
    let t = model.add_continuous("t", 0.0, cap);
    model.add_constraint(
        "norm",
        w.iter().map(|v| (*v, 1.0)).collect(),
        Relation::Eq,
        total,
    );
    add_margin_rows(&mut model, rows, &w, eps);
    for r in rows {
        let mut terms: Vec<(VarId, f64)> = w.iter().copied().zip(r.coef.iter().copied()).collect();
        terms.push((t, -1.0));
        model.add_constraint("", terms, Relation::Ge, -r.offset);
    }
    model.set_objective(Sense::Maximize, vec![(t, 1.0)], 0.0);
    let sol = solve(&model, opts).ok()?;
    (sol.status == Status::Optimal).then(|| w.iter().map(|v| sol.value(*v).max(0.0)).collect())
}

fn snap(w: &[f64], grid: f64) -> Vec<f64> {
    w.iter().map(|v| (v / grid).round() * grid).collect()
}

/// Solve the pruning problem on `points` with margin `eps` (already
/// validated by [`effective_epsilon`]).
pub fn solve_pruner(
    e: &Ensemble,
    points: &[ConstraintPoint],
    objective: PruneObjective,
    eps: f64,
    opts: &SolveOptions,
) -> Result<PrunerSolution, PrunerError> {
    let rows = margin_rows(e, points, objective);
    let m = e.n_trees();
    let total = e.total_weight();
    let mut model = MilpModel::new();
    let ub = match objective {
        PruneObjective::L0 => total,
        PruneObjective::L1 => f64::INFINITY,
    };
    let w: Vec<VarId> = (0..m)
        .map(|i| model.add_continuous(&format!("w{i}"), 0.0, ub))
        .collect();
    add_margin_rows(&mut model, &rows, &w, eps);
    let start = match objective {
        PruneObjective::L0 => {
            let z: Vec<VarId> = (0..m).map(|i| model.add_binary(&format!("z{i}"))).collect();
            model.add_constraint(
                "norm",
                w.iter().map(|v| (*v, 1.0)).collect(),
                Relation::Eq,
                total,
            );
            for i in 0..m {
                model.add_constraint(
                    &format!("link{i}"),
                    vec![(w[i], 1.0), (z[i], -total)],
                    Relation::Le,
                    0.0,
                );
            }
            // Cover cuts: a row with positive right-hand side needs a kept tree
            // with a positive coefficient.
            let mut covers = HashSet::new();
            for r in &rows {
                let rhs = -r.offset + if r.strict { eps } else { 0.0 };
                if rhs > 0.0 {
                    let cover: Vec<usize> = (0..m).filter(|&i| r.coef[i] > 0.0).collect();
                    if covers.insert(cover.clone()) {
                        model.add_constraint(
                            "",
                            cover.iter().map(|&i| (z[i], 1.0)).collect(),
                            Relation::Ge,
                            1.0,
                        );
                    }
                }
            }
            model.set_objective(Sense::Minimize, z.iter().map(|v| (*v, 1.0)).collect(), 0.0);
            let mut s: Vec<f64> = e.weights().to_vec();
            s.extend(e.weights().iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }));
            s
        }
        PruneObjective::L1 => {
            model.set_objective(Sense::Minimize, w.iter().map(|v| (*v, 1.0)).collect(), 0.0);
            e.weights().to_vec()
        }
    };
    let sol = solve_with_start(&model, opts, Some(&start))?;
    debug!(
        "pruner: {} rows, status {:?}, objective {:?}, {} nodes",
        rows.len(),
        sol.status,
        sol.objective,
        sol.nodes
    );
    if !sol.has_incumbent() {
        return Err(match sol.status {
            Status::Infeasible => PrunerError::Infeasible,
            _ => PrunerError::SolverUncertified,
        });
    }
    let mut raw: Vec<f64> = w.iter().map(|v| sol.value(*v).max(0.0)).collect();
    if objective == PruneObjective::L0 {
        // Drop weights whose indicator is off; the link row only bounds them
        // up to the feasibility tolerance.
        for (i, v) in raw.iter_mut().enumerate() {
            if sol.value(VarId(m + i)) < 0.5 {
                *v = 0.0;
            }
        }
    }
    let support: Vec<bool> = raw.iter().map(|v| *v > 0.0).collect();
    let grid = total * 2f64.powi(-30);
    let mut candidates = Vec::new();
    if objective == PruneObjective::L0 {
        if let Some(p) = polish(e, &rows, &support, eps, opts) {
            candidates.push(snap(&p, grid));
            candidates.push(p);
        }
    }
    candidates.push(snap(&raw, grid));
    candidates.push(raw);
    let mut last_bad = 0;
    for cand in candidates {
        let keeps_support = cand
            .iter()
            .zip(&support)
            .all(|(v, on)| (*v > 0.0) == *on || objective == PruneObjective::L1);
        match preserves(e, points, &cand) {
            None if keeps_support => {
                let objective_value = match objective {
                    PruneObjective::L0 => support_size(&cand) as f64,
                    PruneObjective::L1 => cand.iter().sum(),
                };
                return Ok(PrunerSolution {
                    support: support_size(&cand),
                    weights: cand,
                    objective_value,
                    status: sol.status,
                    optimal: sol.status == Status::Optimal,
                    epsilon: eps,
                    nodes: sol.nodes,
                    wall_time_s: sol.wall_time_s,
                });
            }
            Some(i) => last_bad = i,
            None => {}
        }
    }
    Err(PrunerError::EquivalenceViolated(last_bad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{Tree, TreeNode};

    fn stump(t: f64, l: [f64; 2], r: [f64; 2]) -> Tree {
        Tree::from_node(&TreeNode::split(
            0,
            t,
            TreeNode::leaf(l.to_vec()),
            TreeNode::leaf(r.to_vec()),
        ))
    }

    #[test]
    fn empty_constraint_set_keeps_one_tree() {
        let e = Ensemble::unweighted(vec![stump(0.5, [1.0, 0.0], [0.0, 1.0]); 3], 1, 2).unwrap();
        let s = solve_pruner(
            &e,
            &[],
            PruneObjective::L0,
            default_epsilon(&e),
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(s.support, 1);
        assert!((s.weights.iter().sum::<f64>() - 3.0).abs() < 1e-9);
        assert!(s.optimal);
    }

    #[test]
    fn identical_trees_reduce_to_one() {
        let e = Ensemble::unweighted(vec![stump(0.5, [1.0, 0.0], [0.0, 1.0]); 2], 1, 2).unwrap();
        let pts: Vec<ConstraintPoint> = [0.0, 1.0]
            .iter()
            .map(|x| ConstraintPoint::from_point(&e, &[*x]))
            .collect();
        let eps = effective_epsilon(&e, &pts, PruneObjective::L0, default_epsilon(&e)).unwrap();
        let s = solve_pruner(&e, &pts, PruneObjective::L0, eps, &SolveOptions::default()).unwrap();
        assert_eq!(s.support, 1);
        let kept = s.weights.iter().find(|v| **v > 0.0).unwrap();
        assert!((kept - 2.0).abs() < 1e-6);
    }

    #[test]
    fn conflicting_points_need_both_trees() {
        // Classes 0, 1, 0 on the three points: tree 0 alone misses x = 2 and
        // tree 1 alone ties at x = 1.
        let t0 = stump(0.5, [1.0, 0.0], [0.0, 1.0]);
        let t1 = stump(1.5, [0.0, 0.0], [2.0, 0.0]);
        let t2 = stump(0.5, [0.3, 0.0], [0.0, 0.0]);
        let e = Ensemble::unweighted(vec![t0, t1, t2], 1, 2).unwrap();
        let pts: Vec<ConstraintPoint> = [0.0, 1.0, 2.0]
            .iter()
            .map(|x| ConstraintPoint::from_point(&e, &[*x]))
            .collect();
        let eps = effective_epsilon(&e, &pts, PruneObjective::L0, default_epsilon(&e)).unwrap();
        let s = solve_pruner(&e, &pts, PruneObjective::L0, eps, &SolveOptions::default()).unwrap();
        assert_eq!(s.support, 2);
        assert_eq!(s.weights[2], 0.0);
        assert!(preserves(&e, &pts, &s.weights).is_none());
    }

    #[test]
    fn l1_objective_scales_down() {
        let e = Ensemble::unweighted(vec![stump(0.5, [0.0, 1.0], [1.0, 0.0]); 2], 1, 2).unwrap();
        let pts = vec![ConstraintPoint::from_point(&e, &[0.0])];
        let eps = effective_epsilon(&e, &pts, PruneObjective::L1, 0.01).unwrap();
        let s = solve_pruner(&e, &pts, PruneObjective::L1, eps, &SolveOptions::default()).unwrap();
        assert!((s.objective_value - 0.01).abs() < 1e-7);
    }

    #[test]
    fn near_tie_halves_epsilon() {
        let e =
            Ensemble::unweighted(vec![stump(0.5, [1.0 - 1e-9, 1.0], [0.0, 1.0])], 1, 2).unwrap();
        let pts = vec![ConstraintPoint::from_point(&e, &[0.0])];
        let eps = effective_epsilon(&e, &pts, PruneObjective::L0, 1e-6).unwrap();
        assert!(eps <= 1e-9 && eps > 1e-9 / 2.0 - 1e-20);
        let tie =
            Ensemble::unweighted(vec![stump(0.5, [1.0 - 1e-15, 1.0], [0.0, 1.0])], 1, 2).unwrap();
        let pts = vec![ConstraintPoint::from_point(&tie, &[0.0])];
        assert!(matches!(
            effective_epsilon(&tie, &pts, PruneObjective::L0, 1e-6),
            Err(PrunerError::InfeasibleAtEpsilon(_))
        ));
    }
}
