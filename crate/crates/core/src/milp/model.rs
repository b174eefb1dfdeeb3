use serde::{Deserialize, Serialize};

use super::MilpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates the constraint (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.relation {
            Relation::Le => (a - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - a).max(0.0),
            Relation::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: Sense,
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            sense: Sense::Minimize,
            terms: Vec::new(),
            constant: 0.0,
        }
    }
}

fn lp_safe(name: &str, fallback: String) -> String {
    let mut out: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.[]".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if out.is_empty() {
        return fallback;
    }
    if !out.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        out.insert(0, '_');
    }
    out
}

/// Linear model over binary and continuous variables.
///
/// Names are sanitized to LP-file identifiers on insertion and made unique,
/// so an exported model always parses back to the same structure.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MilpModel {
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Objective,
    #[serde(skip)]
    names: std::collections::HashSet<String>,
}

impl PartialEq for MilpModel {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.constraints == other.constraints
            && self.objective == other.objective
    }
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    fn unique_name(&mut self, raw: &str, fallback: String) -> String {
        let base = lp_safe(raw, fallback);
        let mut name = base.clone();
        let mut k = 1;
        while self.names.contains(&name) {
            name = format!("{base}_{k}");
            k += 1;
        }
        self.names.insert(name.clone());
        name
    }

    pub fn add_binary(&mut self, name: &str) -> VarId {
        let id = VarId(self.variables.len());
        let name = self.unique_name(name, format!("x{}", id.0));
        self.variables.push(Variable {
            name,
            kind: VarKind::Binary,
            lb: 0.0,
            ub: 1.0,
        });
        id
    }

    pub fn add_continuous(&mut self, name: &str, lb: f64, ub: f64) -> VarId {
        let id = VarId(self.variables.len());
        let name = self.unique_name(name, format!("x{}", id.0));
        self.variables.push(Variable {
            name,
            kind: VarKind::Continuous,
            lb,
            ub,
        });
        id
    }

    pub fn set_bounds(&mut self, var: VarId, lb: f64, ub: f64) {
        let v = &mut self.variables[var.0];
        v.lb = lb;
        v.ub = ub;
    }

    pub fn add_constraint(
        &mut self,
        name: &str,
        terms: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        let idx = self.constraints.len();
        let name = self.unique_name(name, format!("c{idx}"));
        self.constraints.push(Constraint {
            name,
            terms,
            relation,
            rhs,
        });
        idx
    }

    pub fn set_objective(&mut self, sense: Sense, terms: Vec<(VarId, f64)>, constant: f64) {
        self.objective = Objective {
            sense,
            terms,
            constant,
        };
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, v: VarId) -> &Variable {
        &self.variables[v.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    pub fn find_var(&self, name: &str) -> Option<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(VarId)
    }

    pub(crate) fn rebuild_names(&mut self) {
        self.names = self
            .variables
            .iter()
            .map(|v| v.name.clone())
            .chain(self.constraints.iter().map(|c| c.name.clone()))
            .collect();
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let bad = |m: String| Err(MilpError::MalformedModel(m));
        let n = self.variables.len();
        for v in &self.variables {
            if v.lb.is_nan() || v.ub.is_nan() || v.lb > v.ub {
                return bad(format!(
                    "variable {} has invalid bounds [{}, {}]",
                    v.name, v.lb, v.ub
                ));
            }
            if v.kind == VarKind::Binary
                && !((v.lb == 0.0 || v.lb == 1.0) && (v.ub == 0.0 || v.ub == 1.0))
            {
                return bad(format!(
                    "binary variable {} must have bounds within {{0, 1}}",
                    v.name
                ));
            }
            if v.lb == f64::INFINITY || v.ub == f64::NEG_INFINITY {
                return bad(format!("variable {} has an empty domain", v.name));
            }
        }
        let check_terms = |terms: &[(VarId, f64)], what: &str| -> Result<(), MilpError> {
            for (var, c) in terms {
                if var.0 >= n {
                    return bad(format!("{what} references undeclared variable {}", var.0));
                }
                if !c.is_finite() {
                    return bad(format!("{what} has a non-finite coefficient"));
                }
            }
            Ok(())
        };
        for c in &self.constraints {
            check_terms(&c.terms, &format!("constraint {}", c.name))?;
            if !c.rhs.is_finite() {
                return bad(format!(
                    "constraint {} has a non-finite right-hand side",
                    c.name
                ));
            }
        }
        check_terms(&self.objective.terms, "objective")?;
        if !self.objective.constant.is_finite() {
            return bad("objective constant is not finite".into());
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.constant
            + self
                .objective
                .terms
                .iter()
                .map(|(v, c)| c * values[v.0])
                .sum::<f64>()
    }

    /// Largest violation of bounds, constraints and integrality at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (v, x) in self.variables.iter().zip(values) {
            worst = worst.max(v.lb - x).max(x - v.ub);
            if v.kind == VarKind::Binary {
                worst = worst.max((x - x.round()).abs());
            }
        }
        for c in &self.constraints {
            worst = worst.max(c.violation(values));
        }
        worst
    }

    pub fn is_feasible(&self, values: &[f64], feas_tol: f64) -> bool {
        values.len() == self.variables.len() && self.max_violation(values) <= feas_tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_sanitized_and_unique() {
        let mut m = MilpModel::new();
        let a = m.add_binary("z m,1");
        let b = m.add_binary("z m,1");
        let c = m.add_continuous("3w", 0.0, 1.0);
        assert_eq!(m.variable(a).name, "z_m_1");
        assert_eq!(m.variable(b).name, "z_m_1_1");
        assert_eq!(m.variable(c).name, "_3w");
        let d = m.add_continuous("", 0.0, 1.0);
        assert_eq!(m.variable(d).name, "x3");
    }

    #[test]
    fn validation_catches_undeclared_and_bad_bounds() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 1.0, 0.0);
        assert!(m.validate().is_err());
        m.set_bounds(x, 0.0, 1.0);
        m.add_constraint("c", vec![(VarId(7), 1.0)], Relation::Le, 1.0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn violation_measures() {
        let mut m = MilpModel::new();
        let x = m.add_binary("x");
        let y = m.add_continuous("y", 0.0, 2.0);
        m.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Relation::Ge, 2.5);
        assert!((m.max_violation(&[1.0, 1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(m.max_violation(&[1.0, 1.5]), 0.0);
        assert!((m.max_violation(&[0.5, 2.0]) - 0.5).abs() < 1e-15);
    }
}
