use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution};
use serde::{Deserialize, Serialize};

use super::model::{MilpModel, Relation, Sense, VarId, VarKind};
use super::MilpError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub time_limit_s: f64,
    pub node_limit: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            time_limit_s: 120.0,
            node_limit: u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub feas_tol: f64,
    pub int_tol: f64,
    /// Absolute objective gap below which a node is pruned.
    pub gap_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            int_tol: 1e-6,
            gap_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub limits: Limits,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    TimeLimit,
    IterLimit,
    /// The LP solver failed on some node; the search is incomplete.
    Numerical,
}

impl Status {
    /// Optimal and Infeasible are certificates; the limit statuses are not.
    pub fn is_certified(self) -> bool {
        matches!(self, Status::Optimal | Status::Infeasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: Status,
    /// Incumbent values, empty when no feasible point is known.
    pub values: Vec<f64>,
    pub objective: Option<f64>,
    /// Best proven bound on the objective, in the model's own sense.
    pub bound: Option<f64>,
    /// Absolute distance between incumbent and bound.
    pub gap: Option<f64>,
    pub wall_time_s: f64,
    pub nodes: u64,
}

impl MilpSolution {
    pub fn has_incumbent(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

struct Node {
    bound: f64,
    depth: usize,
    seq: u64,
    fix: Vec<(usize, f64)>,
    warm: Option<Arc<Solution>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap pops the greatest: lowest bound, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

const WARM_NODE_CAP: usize = 4096;

type Row = (Vec<(usize, f64)>, Relation, f64);

struct Search<'a> {
    model: &'a MilpModel,
    tol: Tolerances,
    sign: f64,
    obj: Vec<f64>,
    rows: Vec<Row>,
    binaries: Vec<usize>,
    /// Every feasible point has an integer objective value.
    integral_obj: bool,
    start: Instant,
    incumbent: Option<(f64, Vec<f64>)>,
}

#[allow(clippy::large_enum_variant)]
enum Lp {
    Solved(Solution),
    Infeasible,
}

fn merge_terms(terms: &[(VarId, f64)]) -> Vec<(usize, f64)> {
    let mut t: Vec<(usize, f64)> = terms.iter().map(|(v, c)| (v.0, *c)).collect();
    t.sort_by_key(|(v, _)| *v);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
    for (v, c) in t {
        match out.last_mut() {
            Some((lv, lc)) if *lv == v => *lc += c,
            _ => out.push((v, c)),
        }
    }
    out.retain(|(_, c)| *c != 0.0);
    out
}

fn cmp_op(r: Relation) -> ComparisonOp {
    match r {
        Relation::Le => ComparisonOp::Le,
        Relation::Ge => ComparisonOp::Ge,
        Relation::Eq => ComparisonOp::Eq,
    }
}

impl<'a> Search<'a> {
    fn new(model: &'a MilpModel, tol: Tolerances) -> Self {
        let sign = match model.objective().sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut obj = vec![0.0; model.n_vars()];
        for (v, c) in merge_terms(&model.objective().terms) {
            obj[v] = sign * c;
        }
        let rows = model
            .constraints()
            .iter()
            .map(|c| (merge_terms(&c.terms), c.relation, c.rhs))
            .collect();
        let binaries = model
            .variables()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect::<Vec<usize>>();
        let is_int = |c: f64| c == c.round();
        let integral_obj = is_int(model.objective().constant)
            && obj.iter().enumerate().all(|(i, c)| {
                *c == 0.0 || (model.variables()[i].kind == VarKind::Binary && is_int(*c))
            });
        Self {
            model,
            tol,
            sign,
            obj,
            rows,
            binaries,
            integral_obj,
            start: Instant::now(),
            incumbent: None,
        }
    }

    fn internal_obj(&self, values: &[f64]) -> f64 {
        self.sign * self.model.objective_value(values)
    }

    fn empty_rows_feasible(&self) -> bool {
        self.rows
            .iter()
            .filter(|(t, _, _)| t.is_empty())
            .all(|(_, rel, rhs)| match rel {
                Relation::Le => 0.0 <= rhs + self.tol.feas_tol,
                Relation::Ge => 0.0 >= rhs - self.tol.feas_tol,
                Relation::Eq => rhs.abs() <= self.tol.feas_tol,
            })
    }

    /// Fresh LP with the given binary fixings.
    fn solve_fresh(&self, fix: &[(usize, f64)]) -> Result<(Lp, Vec<microlp::Variable>), MilpError> {
        let mut lb: Vec<f64> = self.model.variables().iter().map(|v| v.lb).collect();
        let mut ub: Vec<f64> = self.model.variables().iter().map(|v| v.ub).collect();
        for &(v, val) in fix {
            lb[v] = val;
            ub[v] = val;
        }
        // A singular basis sometimes goes away with a different row order.
        let mut last = String::new();
        for reversed in [false, true] {
            let mut p = Problem::new(OptimizationDirection::Minimize);
            let vars: Vec<microlp::Variable> = (0..self.model.n_vars())
                .map(|i| p.add_var(self.obj[i], (lb[i], ub[i])))
                .collect();
            let mut rows: Vec<_> = self.rows.iter().filter(|(t, _, _)| !t.is_empty()).collect();
            if reversed {
                rows.reverse();
            }
            for (terms, rel, rhs) in rows {
                p.add_constraint(terms.iter().map(|&(v, c)| (vars[v], c)), cmp_op(*rel), *rhs);
            }
            match p.solve() {
                Ok(s) => return Ok((Lp::Solved(s), vars)),
                Err(microlp::Error::Infeasible) => return Ok((Lp::Infeasible, vars)),
                Err(microlp::Error::Unbounded) => return Err(MilpError::Unbounded),
                Err(microlp::Error::InternalError(m)) => {
                    debug!("LP failed ({m}), reversed order: {reversed}");
                    last = m;
                }
            }
        }
        Err(MilpError::Lp(last))
    }

    fn values_of(&self, sol: &Solution, vars: &[microlp::Variable]) -> Vec<f64> {
        vars.iter().map(|v| *sol.var_value(*v)).collect()
    }

    /// Round binaries and accept the point if it satisfies the model; else
    /// re-solve the continuous part with all binaries fixed.
    fn try_candidate(&mut self, mut values: Vec<f64>) -> Result<bool, MilpError> {
        for &b in &self.binaries {
            values[b] = values[b].round().clamp(0.0, 1.0);
        }
        if !self.model.is_feasible(&values, self.tol.feas_tol) {
            let fix: Vec<(usize, f64)> = self.binaries.iter().map(|&b| (b, values[b])).collect();
            match self.solve_fresh(&fix).or_else(|e| match e {
                MilpError::Lp(_) => Ok((Lp::Infeasible, Vec::new())),
                e => Err(e),
            })? {
                (Lp::Solved(s), vars) => {
                    values = self.values_of(&s, &vars);
                    for &b in &self.binaries {
                        values[b] = values[b].round();
                    }
                    if !self.model.is_feasible(&values, self.tol.feas_tol) {
                        return Ok(false);
                    }
                }
                (Lp::Infeasible, _) => return Ok(false),
            }
        }
        let obj = self.internal_obj(&values);
        if self.incumbent.as_ref().is_none_or(|(best, _)| obj < *best) {
            debug!(
                "new incumbent {obj} at {:.3}s",
                self.start.elapsed().as_secs_f64()
            );
            self.incumbent = Some((obj, values));
            return Ok(true);
        }
        Ok(false)
    }

    fn most_fractional(&self, values: &[f64], tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &b in &self.binaries {
            let frac = (values[b] - values[b].round()).abs();
            if frac > tol && best.is_none_or(|(_, f)| frac > f) {
                best = Some((b, frac));
            }
        }
        best.map(|(b, _)| b)
    }

    fn prunable(&self, bound: f64) -> bool {
        let bound = if self.integral_obj {
            (bound - 1e-6).ceil()
        } else {
            bound
        };
        self.incumbent
            .as_ref()
            .is_some_and(|(best, _)| bound >= best - self.tol.gap_tol)
    }
}

pub fn solve(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, MilpError> {
    solve_with_start(model, opts, None)
}

/// Branch-and-bound with best-first node selection and depth-first dives.
/// `start` is an optional full assignment used as the initial incumbent when
/// it is feasible.
pub fn solve_with_start(
    model: &MilpModel,
    opts: &SolveOptions,
    start: Option<&[f64]>,
) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let mut s = Search::new(model, opts.tolerances);
    let limits = opts.limits;
    let finish = |s: &Search, status: Status, bound: Option<f64>, nodes: u64| {
        let (values, objective) = match &s.incumbent {
            Some((_, v)) => (v.clone(), Some(model.objective_value(v))),
            None => (Vec::new(), None),
        };
        let bound = match status {
            Status::Optimal => objective,
            _ => bound
                .map(|b| s.incumbent.as_ref().map_or(b, |(best, _)| b.min(*best)))
                .map(|b| s.sign * b),
        };
        let gap = objective.zip(bound).map(|(o, b)| (o - b).abs());
        MilpSolution {
            status,
            values,
            objective,
            bound,
            gap: if status == Status::Optimal {
                Some(0.0)
            } else {
                gap
            },
            wall_time_s: s.start.elapsed().as_secs_f64(),
            nodes,
        }
    };
    let timed_out = |s: &Search| s.start.elapsed().as_secs_f64() >= limits.time_limit_s;

    if !s.empty_rows_feasible() {
        return Ok(finish(&s, Status::Infeasible, None, 0));
    }
    if let Some(x) = start {
        if x.len() == model.n_vars() {
            s.try_candidate(x.to_vec())?;
        }
    }
    if timed_out(&s) {
        return Ok(finish(&s, Status::TimeLimit, None, 0));
    }

    let (root, vars) = match s.solve_fresh(&[]) {
        Ok(r) => r,
        Err(MilpError::Lp(m)) => {
            warn!("root LP failed: {m}");
            return Ok(finish(&s, Status::Numerical, None, 1));
        }
        Err(e) => return Err(e),
    };
    let root = match root {
        Lp::Solved(sol) => sol,
        Lp::Infeasible => return Ok(finish(&s, Status::Infeasible, None, 1)),
    };
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut nodes = 0u64;
    let mut lost = 0u64;
    let mut dive: Option<(Node, Option<Solution>)> = Some((
        Node {
            bound: f64::NEG_INFINITY,
            depth: 0,
            seq,
            fix: Vec::new(),
            warm: None,
        },
        Some(root),
    ));

    loop {
        let (node, presolved) = match dive.take() {
            Some(d) => d,
            None => match heap.pop() {
                Some(n) => (n, None),
                None => break,
            },
        };
        if s.prunable(node.bound) {
            continue;
        }
        if timed_out(&s) {
            heap.push(node);
            let bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
            return Ok(finish(&s, Status::TimeLimit, Some(bound), nodes));
        }
        if nodes >= limits.node_limit {
            heap.push(node);
            let bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
            return Ok(finish(&s, Status::IterLimit, Some(bound), nodes));
        }
        nodes += 1;

        let sol = match presolved {
            Some(sol) => Some(sol),
            None => match node_lp(&s, &node, &vars) {
                Ok(sol) => sol,
                Err(MilpError::Lp(m)) => {
                    warn!("node LP failed, dropping node: {m}");
                    lost += 1;
                    None
                }
                Err(e) => return Err(e),
            },
        };
        let Some(sol) = sol else { continue };
        let lp_obj = sol.objective() + s.sign * model.objective().constant;
        if s.prunable(lp_obj) {
            continue;
        }
        let values = s.values_of(&sol, &vars);
        let branch = match s.most_fractional(&values, s.tol.int_tol) {
            Some(b) => b,
            None => {
                // Integral within tolerance. If rounding does not give a
                // feasible point, keep branching on whatever is left
                // fractional instead of dropping the node.
                if s.try_candidate(values.clone())? || s.prunable(lp_obj) {
                    continue;
                }
                match s.most_fractional(&values, 0.0) {
                    Some(b) => b,
                    None => continue,
                }
            }
        };
        if nodes == 1 || nodes.is_multiple_of(8) {
            let mut up = values.clone();
            for &b in &s.binaries {
                if up[b] > s.tol.int_tol {
                    up[b] = 1.0;
                }
            }
            s.try_candidate(up)?;
            if s.prunable(lp_obj) {
                continue;
            }
        }

        let first = if values[branch] >= 0.5 { 1.0 } else { 0.0 };
        let shared = Arc::new(sol);
        let mut children = [first, 1.0 - first].map(|val| {
            let mut fix = node.fix.clone();
            fix.push((branch, val));
            seq += 1;
            Node {
                bound: lp_obj,
                depth: node.depth + 1,
                seq,
                fix,
                warm: Some(shared.clone()),
            }
        });
        if heap.len() >= WARM_NODE_CAP {
            children[1].warm = None;
        }
        let [a, b] = children;
        heap.push(b);
        dive = Some((a, None));
    }

    match (lost, &s.incumbent) {
        (0, Some(_)) => Ok(finish(&s, Status::Optimal, None, nodes)),
        (0, None) => Ok(finish(&s, Status::Infeasible, None, nodes)),
        _ => Ok(finish(&s, Status::Numerical, None, nodes)),
    }
}

fn node_lp(
    s: &Search,
    node: &Node,
    vars: &[microlp::Variable],
) -> Result<Option<Solution>, MilpError> {
    if let (Some(warm), Some(&(v, val))) = (&node.warm, node.fix.last()) {
        let parent = Arc::clone(warm);
        let parent = Arc::try_unwrap(parent).unwrap_or_else(|a| (*a).clone());
        match parent.fix_var(vars[v], val) {
            Ok(sol) => return Ok(Some(sol)),
            Err(microlp::Error::Infeasible) => return Ok(None),
            Err(e) => debug!("warm-started LP failed ({e}); re-solving from scratch"),
        }
    }
    match s.solve_fresh(&node.fix)? {
        (Lp::Solved(sol), _) => Ok(Some(sol)),
        (Lp::Infeasible, _) => Ok(None),
    }
}
