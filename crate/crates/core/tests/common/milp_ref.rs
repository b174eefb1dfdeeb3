//! Reference pieces for the MILP solver: random models and brute-force
//! enumeration with the dense simplex for the continuous part.

use pine_core::milp::{MilpModel, Relation, Sense, VarKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::simplex::{minimize, LpResult, Rel};

pub fn random_model(rng: &mut ChaCha8Rng, n_bin: usize, n_cont: usize) -> MilpModel {
    let mut m = MilpModel::new();
    let mut vars = Vec::new();
    for i in 0..n_bin {
        vars.push(m.add_binary(&format!("b{i}")));
    }
    for i in 0..n_cont {
        let lo = rng.random_range(-3..=0) as f64;
        let hi = lo + rng.random_range(1..=4) as f64;
        vars.push(m.add_continuous(&format!("y{i}"), lo, hi));
    }
    let n_rows = rng.random_range(1..=n_bin.max(2));
    for r in 0..n_rows {
        let mut terms = Vec::new();
        for &v in &vars {
            if rng.random_bool(0.6) {
                terms.push((v, rng.random_range(-5..=5) as f64 * 0.5));
            }
        }
        let rel = match rng.random_range(0..10) {
            0 => Relation::Eq,
            1..=5 => Relation::Le,
            _ => Relation::Ge,
        };
        let rhs = rng.random_range(-4..=6) as f64 * 0.5;
        m.add_constraint(&format!("r{r}"), terms, rel, rhs);
    }
    let terms = vars
        .iter()
        .map(|&v| (v, rng.random_range(-6..=6) as f64 * 0.25))
        .collect();
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    m.set_objective(sense, terms, rng.random_range(-2..=2) as f64);
    m
}

/// Enumerate all binary assignments; the continuous part of each is solved by
/// the reference simplex. Returns the best objective in the model's sense.
pub fn brute_force(m: &MilpModel) -> Option<f64> {
    let bins: Vec<usize> = (0..m.n_vars())
        .filter(|&i| m.variables()[i].kind == VarKind::Binary)
        .collect();
    let conts: Vec<usize> = (0..m.n_vars())
        .filter(|&i| m.variables()[i].kind == VarKind::Continuous)
        .collect();
    let sign = if m.objective().sense == Sense::Minimize {
        1.0
    } else {
        -1.0
    };
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut x = vec![0.0; m.n_vars()];
        for (k, &b) in bins.iter().enumerate() {
            x[b] = ((mask >> k) & 1) as f64;
        }
        let value = if conts.is_empty() {
            if m.max_violation(&x) > 1e-9 {
                continue;
            }
            m.objective_value(&x)
        } else {
            let mut c = vec![0.0; conts.len()];
            for (v, coef) in &m.objective().terms {
                if let Some(k) = conts.iter().position(|&j| j == v.0) {
                    c[k] += sign * coef;
                }
            }
            let rows: Vec<(Vec<f64>, Rel, f64)> = m
                .constraints()
                .iter()
                .map(|con| {
                    let mut a = vec![0.0; conts.len()];
                    let mut fixed = 0.0;
                    for (v, coef) in &con.terms {
                        match conts.iter().position(|&j| j == v.0) {
                            Some(k) => a[k] += coef,
                            None => fixed += coef * x[v.0],
                        }
                    }
                    let rel = match con.relation {
                        Relation::Le => Rel::Le,
                        Relation::Ge => Rel::Ge,
                        Relation::Eq => Rel::Eq,
                    };
                    (a, rel, con.rhs - fixed)
                })
                .collect();
            let lb: Vec<f64> = conts.iter().map(|&j| m.variables()[j].lb).collect();
            let ub: Vec<f64> = conts.iter().map(|&j| m.variables()[j].ub).collect();
            match minimize(&c, &rows, &lb, &ub) {
                LpResult::Optimal { x: y, .. } => {
                    for (k, &j) in conts.iter().enumerate() {
                        x[j] = y[k];
                    }
                    m.objective_value(&x)
                }
                LpResult::Infeasible => continue,
                LpResult::Unbounded => unreachable!("bounded continuous variables"),
            }
        };
        if best.is_none_or(|b| sign * value < sign * b) {
            best = Some(value);
        }
    }
    best
}

/// Smallest support over all tree subsets that admit non-negative weights
/// summing to `total` and meeting every margin row, each subset checked by
/// an LP feasibility solve. Rows are `(coef, offset, rhs)` meaning
/// `coef . w + offset >= rhs`.
pub fn min_support_by_enumeration(
    rows: &[(Vec<f64>, f64, f64)],
    m: usize,
    total: f64,
) -> Option<usize> {
    let mut lp_rows: Vec<(Vec<f64>, Rel, f64)> = rows
        .iter()
        .map(|(a, off, rhs)| (a.clone(), Rel::Ge, rhs - off))
        .collect();
    lp_rows.push((vec![1.0; m], Rel::Eq, total));
    let c = vec![0.0; m];
    let lb = vec![0.0; m];
    (1..=m).find(|&size| {
        (0u32..(1 << m))
            .filter(|s| s.count_ones() as usize == size)
            .any(|mask| {
                let ub: Vec<f64> = (0..m)
                    .map(|i| if (mask >> i) & 1 == 1 { total } else { 0.0 })
                    .collect();
                matches!(minimize(&c, &lp_rows, &lb, &ub), LpResult::Optimal { .. })
            })
    })
}
