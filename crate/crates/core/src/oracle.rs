//! Counterexample search: points where the pruned and original weights
//! predict different classes, optionally restricted to `s(x) <= tau`.

use std::path::PathBuf;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::Threshold;
use crate::ensemble::{Ensemble, ThresholdIndex};
use crate::milp::{
    export_lp, solve, MilpError, MilpModel, MilpSolution, Relation, Sense, SolveOptions, Status,
    VarId,
};
use crate::plausibility::{EncodeContext, PlausibilityError, ScoreModel};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("weight vector has {found} entries, ensemble has {expected} trees")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Plausibility(#[from] PlausibilityError),
    #[error("oracle dump failed: {0}")]
    Dump(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleObjective {
    /// Maximize the pruned model's preference for the wrong class.
    #[default]
    MaxMargin,
    /// Stop at the first feasible point.
    Feasibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub eps_strict: f64,
    pub objective: OracleObjective,
    pub solve: SolveOptions,
    /// Cells rejected by exact re-evaluation before a class pair is given up
    /// as uncertified.
    pub max_rejected_cells: usize,
    pub parallel: bool,
    pub dump_dir: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eps_strict: 1e-6,
            objective: OracleObjective::MaxMargin,
            solve: SolveOptions::default(),
            max_rejected_cells: 50,
            parallel: true,
            dump_dir: None,
        }
    }
}

/// Interval index per feature over the augmented thresholds, and the leaf
/// reached in every tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellAssignment {
    pub intervals: Vec<usize>,
    pub leaves: Vec<usize>,
}

impl CellAssignment {
    /// `(low, high]` per feature; infinite ends are `None`.
    pub fn bounds(&self, theta: &ThresholdIndex) -> Vec<(Option<f64>, Option<f64>)> {
        self.intervals
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let t = theta.thresholds(j);
                let lo = (k > 0).then(|| t[k - 1]);
                let hi = t.get(k).copied();
                (lo, hi)
            })
            .collect()
    }
}

/// Representative point of a cell: the right endpoint of each interval, the
/// last threshold plus one for a right-unbounded interval, and 0 on axes
/// without thresholds.
pub fn reconstruct_point(theta: &ThresholdIndex, intervals: &[usize]) -> Vec<f64> {
    intervals
        .iter()
        .enumerate()
        .map(|(j, &k)| theta.representative(j, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub original_class: usize,
    pub pruned_class: usize,
    pub cell: CellAssignment,
    pub score: Option<f64>,
    /// `F_{c'}(x; w) - F_c(x; w)` at the point.
    pub margin: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub original_class: usize,
    pub pruned_class: usize,
    pub status: Status,
    pub certified: bool,
    pub found: bool,
    pub rejected_cells: usize,
    pub n_binaries: usize,
    pub n_constraints: usize,
    pub nodes: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Every class pair was solved to a certificate.
    pub certified: bool,
    pub found: Vec<Counterexample>,
    pub pairs: Vec<PairRecord>,
    pub wall_time_s: f64,
}

impl OracleResult {
    /// No counterexample exists in the searched region.
    pub fn certified_empty(&self) -> bool {
        self.certified && self.found.is_empty()
    }
}

pub struct Oracle<'a> {
    e: &'a Ensemble,
    theta: ThresholdIndex,
    score: Option<(&'a ScoreModel, Threshold)>,
    cfg: OracleConfig,
}

struct PairModel {
    model: MilpModel,
    mu: Vec<Vec<VarId>>,
    z: Vec<Vec<VarId>>,
}

fn linear_class_diff(
    e: &Ensemble,
    w: &[f64],
    z: &[Vec<VarId>],
    c: usize,
    other: usize,
) -> Vec<(VarId, f64)> {
    let mut terms = Vec::new();
    for (m, tree) in e.trees().iter().enumerate() {
        if w[m] == 0.0 {
            continue;
        }
        for (l, v) in tree.all_leaf_values().iter().enumerate() {
            let a = w[m] * (v[c] - v[other]);
            if a != 0.0 {
                terms.push((z[m][l], a));
            }
        }
    }
    terms
}

impl<'a> Oracle<'a> {
    /// The threshold index is the ensemble's own thresholds merged with the
    /// score model's, so every active score is exactly representable. An
    /// unbounded threshold leaves the index untouched.
    pub fn new(
        e: &'a Ensemble,
        score: Option<(&'a ScoreModel, Threshold)>,
        cfg: OracleConfig,
    ) -> Self {
        let extra = score
            .filter(|(_, t)| !t.is_unbounded())
            .map(|(s, _)| s.extra_thresholds(e.n_features()));
        let theta = ThresholdIndex::from_ensemble(e, extra.as_deref());
        Self {
            e,
            theta,
            score,
            cfg,
        }
    }

    pub fn thresholds(&self) -> &ThresholdIndex {
        &self.theta
    }

    fn active_score(&self) -> Option<(&'a ScoreModel, Threshold)> {
        self.score.filter(|(_, t)| !t.is_unbounded())
    }

    /// Encoding shared by every class pair: interval chain, leaf indicators
    /// and the plausibility constraint.
    fn base_model(&self) -> Result<PairModel, OracleError> {
        let e = self.e;
        let mut model = MilpModel::new();
        let mu: Vec<Vec<VarId>> = (0..e.n_features())
            .map(|j| {
                let vars: Vec<VarId> = (0..self.theta.thresholds(j).len())
                    .map(|k| model.add_binary(&format!("mu_{j}_{k}")))
                    .collect();
                for k in 1..vars.len() {
                    model.add_constraint(
                        "",
                        vec![(vars[k - 1], 1.0), (vars[k], -1.0)],
                        Relation::Le,
                        0.0,
                    );
                }
                vars
            })
            .collect();
        let mut z = Vec::with_capacity(e.n_trees());
        for (m, tree) in e.trees().iter().enumerate() {
            let vars: Vec<VarId> = (0..tree.n_leaves())
                .map(|l| model.add_binary(&format!("z_{m}_{l}")))
                .collect();
            model.add_constraint(
                &format!("one_leaf_{m}"),
                vars.iter().map(|v| (*v, 1.0)).collect(),
                Relation::Eq,
                1.0,
            );
            for s in tree.split_infos() {
                let k = self
                    .theta
                    .position(s.feature, s.threshold)
                    .expect("ensemble thresholds are in the index");
                let mv = mu[s.feature][k];
                let mut left: Vec<(VarId, f64)> =
                    s.left_leaves.iter().map(|&l| (vars[l], 1.0)).collect();
                left.push((mv, -1.0));
                model.add_constraint("", left, Relation::Le, 0.0);
                let mut right: Vec<(VarId, f64)> =
                    s.right_leaves.iter().map(|&l| (vars[l], 1.0)).collect();
                right.push((mv, 1.0));
                model.add_constraint("", right, Relation::Le, 1.0);
            }
            z.push(vars);
        }
        if let Some((score, tau)) = self.active_score() {
            let ctx = EncodeContext {
                theta: &self.theta,
                mu: &mu,
                leaf_vars: &z,
            };
            score.encode(&mut model, &ctx, tau)?;
        }
        Ok(PairModel { model, mu, z })
    }

    fn add_class_rows(&self, pm: &mut PairModel, w: &[f64], c: usize, tag: &str) {
        let e = self.e;
        for other in (0..e.n_classes()).filter(|&o| o != c) {
            let terms = linear_class_diff(e, w, &pm.z, c, other);
            let rhs =
                if other < c { self.cfg.eps_strict } else { 0.0 } - (e.bias()[c] - e.bias()[other]);
            pm.model
                .add_constraint(&format!("{tag}_{c}_{other}"), terms, Relation::Ge, rhs);
        }
    }

    fn cell_from(&self, pm: &PairModel, sol: &MilpSolution) -> CellAssignment {
        let intervals = pm
            .mu
            .iter()
            .map(|vars| {
                vars.iter()
                    .position(|v| sol.value(*v) > 0.5)
                    .unwrap_or(vars.len())
            })
            .collect();
        let leaves =
            pm.z.iter()
                .map(|vars| {
                    let mut best = 0;
                    for (l, v) in vars.iter().enumerate() {
                        if sol.value(*v) > sol.value(vars[best]) {
                            best = l;
                        }
                    }
                    best
                })
                .collect();
        CellAssignment { intervals, leaves }
    }

    /// Exact re-evaluation of a candidate cell.
    fn confirm(
        &self,
        w: &[f64],
        cell: &CellAssignment,
        c: usize,
        c2: usize,
    ) -> Option<(Vec<f64>, Option<f64>)> {
        let x = reconstruct_point(&self.theta, &cell.intervals);
        let leaves = self.e.leaves_of(&x);
        if leaves != cell.leaves {
            warn!("oracle cell leaves disagree with re-routing of its representative");
            return None;
        }
        if self.e.class_from_leaves(self.e.weights(), &leaves) != c
            || self.e.class_from_leaves(w, &leaves) != c2
        {
            return None;
        }
        let score = self.score.map(|(s, _)| s.score(self.e, &x));
        if let (Some((_, tau)), Some(s)) = (self.active_score(), score) {
            if !tau.admits(s) {
                return None;
            }
        }
        Some((x, score))
    }

    fn no_good(pm: &mut PairModel, cell: &CellAssignment) {
        let mut terms = Vec::new();
        let mut rhs = 1.0;
        for (vars, &k) in pm.mu.iter().zip(&cell.intervals) {
            for (i, v) in vars.iter().enumerate() {
                if i >= k {
                    terms.push((*v, -1.0));
                    rhs -= 1.0;
                } else {
                    terms.push((*v, 1.0));
                }
            }
        }
        pm.model.add_constraint("", terms, Relation::Ge, rhs);
    }

    fn solve_pair(
        &self,
        w: &[f64],
        c: usize,
        c2: usize,
    ) -> Result<(PairRecord, Option<Counterexample>), OracleError> {
        let start = Instant::now();
        let mut pm = self.base_model()?;
        self.add_class_rows(&mut pm, self.e.weights(), c, "orig");
        self.add_class_rows(&mut pm, w, c2, "pruned");
        let mut obj = linear_class_diff(self.e, w, &pm.z, c2, c);
        let constant = self.e.bias()[c2] - self.e.bias()[c];
        if self.cfg.objective == OracleObjective::Feasibility {
            obj.clear();
        }
        pm.model.set_objective(Sense::Maximize, obj, constant);
        let mut rejected = 0;
        let mut nodes = 0;
        loop {
            let sol = solve(&pm.model, &self.cfg.solve)?;
            nodes += sol.nodes;
            if let Some(dir) = &self.cfg.dump_dir {
                std::fs::create_dir_all(dir)?;
                let stem = dir.join(format!("oracle_{c}_{c2}_{rejected}_{}", std::process::id()));
                std::fs::write(stem.with_extension("lp"), export_lp(&pm.model))?;
                std::fs::write(
                    stem.with_extension("json"),
                    serde_json::to_string_pretty(&sol).expect("solution serializes"),
                )?;
            }
            let record =
                |status: Status, certified: bool, found: bool, rejected: usize| PairRecord {
                    original_class: c,
                    pruned_class: c2,
                    status,
                    certified,
                    found,
                    rejected_cells: rejected,
                    n_binaries: pm.model.n_binaries(),
                    n_constraints: pm.model.n_constraints(),
                    nodes,
                    wall_time_s: start.elapsed().as_secs_f64(),
                };
            if !sol.has_incumbent() {
                let certified = sol.status == Status::Infeasible;
                return Ok((record(sol.status, certified, false, rejected), None));
            }
            let cell = self.cell_from(&pm, &sol);
            if let Some((x, score)) = self.confirm(w, &cell, c, c2) {
                let f = self.e.scores_from_leaves(w, &cell.leaves);
                let cex = Counterexample {
                    x,
                    original_class: c,
                    pruned_class: c2,
                    margin: f[c2] - f[c],
                    cell,
                    score,
                    status: sol.status,
                };
                return Ok((
                    record(sol.status, sol.status.is_certified(), true, rejected),
                    Some(cex),
                ));
            }
            rejected += 1;
            debug!("oracle pair ({c},{c2}): rejected cell {:?}", cell.intervals);
            if rejected > self.cfg.max_rejected_cells || !sol.status.is_certified() {
                return Ok((record(sol.status, false, false, rejected), None));
            }
            Self::no_good(&mut pm, &cell);
        }
    }

    /// One MILP per ordered class pair `(c, c')`; at most one counterexample
    /// per pair, returned in lexicographic pair order.
    pub fn find_counterexamples(&self, w: &[f64]) -> Result<OracleResult, OracleError> {
        if w.len() != self.e.n_trees() {
            return Err(OracleError::DimensionMismatch {
                expected: self.e.n_trees(),
                found: w.len(),
            });
        }
        let start = Instant::now();
        let k = self.e.n_classes();
        let pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|c| (0..k).filter(move |&c2| c2 != c).map(move |c2| (c, c2)))
            .collect();
        let results: Vec<_> = if self.cfg.parallel {
            pairs
                .par_iter()
                .map(|&(c, c2)| self.solve_pair(w, c, c2))
                .collect()
        } else {
            pairs
                .iter()
                .map(|&(c, c2)| self.solve_pair(w, c, c2))
                .collect()
        };
        let mut found = Vec::new();
        let mut records = Vec::new();
        for r in results {
            let (rec, cex) = r?;
            records.push(rec);
            found.extend(cex);
        }
        Ok(OracleResult {
            certified: records.iter().all(|r| r.certified),
            found,
            pairs: records,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Convenience wrapper around [`Oracle`].
pub fn find_counterexamples(
    e: &Ensemble,
    w: &[f64],
    score: Option<(&ScoreModel, Threshold)>,
    cfg: &OracleConfig,
) -> Result<OracleResult, OracleError> {
    Oracle::new(e, score, cfg.clone()).find_counterexamples(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{Tree, TreeNode};

    fn stump(f: usize, t: f64, l: [f64; 2], r: [f64; 2]) -> Tree {
        Tree::from_node(&TreeNode::split(
            f,
            t,
            TreeNode::leaf(l.to_vec()),
            TreeNode::leaf(r.to_vec()),
        ))
    }

    #[test]
    fn reconstruct_rules() {
        let theta = ThresholdIndex::from_lists(vec![vec![0.3, 0.7], vec![]]);
        assert_eq!(reconstruct_point(&theta, &[1, 0]), vec![0.7, 0.0]);
        assert_eq!(reconstruct_point(&theta, &[2, 0]), vec![1.7, 0.0]);
    }

    #[test]
    fn identical_weights_are_certified() {
        let e = Ensemble::unweighted(
            vec![
                stump(0, 0.5, [1.0, 0.0], [0.0, 1.0]),
                stump(1, 0.2, [0.5, 0.0], [0.0, 0.4]),
            ],
            2,
            2,
        )
        .unwrap();
        let r = find_counterexamples(&e, e.weights(), None, &OracleConfig::default()).unwrap();
        assert!(r.certified_empty());
        assert_eq!(r.pairs.len(), 2);
    }

    #[test]
    fn dropping_a_tree_flips_a_cell() {
        // Tree 0 votes class 0 weakly everywhere left of 1.0; tree 1 votes
        // class 1 on (0.5, inf). Without tree 1, (0.5, 1.0] flips.
        let t0 = stump(0, 1.0, [1.0, 0.0], [0.0, 1.0]);
        let t1 = stump(0, 0.5, [0.0, 0.0], [0.0, 2.0]);
        let e = Ensemble::unweighted(vec![t0, t1], 1, 2).unwrap();
        let r = find_counterexamples(&e, &[2.0, 0.0], None, &OracleConfig::default()).unwrap();
        assert_eq!(r.found.len(), 1);
        let c = &r.found[0];
        assert_eq!((c.original_class, c.pruned_class), (1, 0));
        assert_eq!(c.x, vec![1.0]);
        assert_eq!(c.cell.intervals, vec![1]);
    }
}
