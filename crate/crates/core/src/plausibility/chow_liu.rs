use serde::{Deserialize, Serialize};

use super::{BinGrid, PlausibilityError};
use crate::conformal::Threshold;
use crate::dataio::Dataset;
use crate::milp::{MilpModel, Relation, VarId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootRule {
    /// Feature of maximum degree in the spanning tree, lowest index on ties.
    #[default]
    MaxDegree,
    Feature(usize),
}

/// Tree-factorized distribution over binned features.
///
/// Excluded features (a single bin) are not part of the tree and add nothing
/// to the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChowLiuModel {
    grid: BinGrid,
    beta: f64,
    root: usize,
    parent: Vec<Option<usize>>,
    root_table: Vec<f64>,
    /// `cond[j][parent_bin][bin]`; empty for the root and excluded features.
    cond: Vec<Vec<Vec<f64>>>,
}

fn mutual_information(a: &[usize], b: &[usize], ka: usize, kb: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![0.0; ka * kb];
    let mut pa = vec![0.0; ka];
    let mut pb = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0.0 {
                mi += c / n * (c * n / (pa[x] * pb[y])).ln();
            }
        }
    }
    mi
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

impl ChowLiuModel {
    /// Fit on the discretized fit set: Kruskal maximum spanning tree over
    /// empirical mutual information (ties by lexicographic edge), then
    /// pseudo-count smoothed tables.
    pub fn fit(
        fit: &Dataset,
        grid: BinGrid,
        beta: f64,
        root_rule: RootRule,
    ) -> Result<Self, PlausibilityError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(PlausibilityError::InvalidParameter(
                "beta must be positive".into(),
            ));
        }
        if grid.n_features() != fit.n_features() {
            return Err(PlausibilityError::DimensionMismatch {
                expected: fit.n_features(),
                found: grid.n_features(),
            });
        }
        let included = grid.included();
        if included.is_empty() {
            return Err(PlausibilityError::DegenerateGrid);
        }
        let p = grid.n_features();
        let states: Vec<Vec<usize>> = (0..p)
            .map(|j| fit.rows().iter().map(|x| grid.bin_of(j, x[j])).collect())
            .collect();

        let mut edges = Vec::new();
        for (a, &i) in included.iter().enumerate() {
            for &j in &included[a + 1..] {
                let mi = mutual_information(&states[i], &states[j], grid.n_bins(i), grid.n_bins(j));
                edges.push((i, j, mi));
            }
        }
        // Stable sort keeps lexicographic order among equal weights.
        edges.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut uf: Vec<usize> = (0..p).collect();
        let mut adj = vec![Vec::new(); p];
        for (i, j, _) in edges {
            let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
            if ri != rj {
                uf[ri] = rj;
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let root = match root_rule {
            RootRule::Feature(r) => {
                if !included.contains(&r) {
                    return Err(PlausibilityError::InvalidParameter(format!(
                        "root feature {r} is not an included feature"
                    )));
                }
                r
            }
            RootRule::MaxDegree => {
                let mut best = included[0];
                for &j in &included {
                    if adj[j].len() > adj[best].len() {
                        best = j;
                    }
                }
                best
            }
        };
        let mut parent = vec![None; p];
        let mut stack = vec![root];
        let mut seen = vec![false; p];
        seen[root] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some(i);
                    stack.push(j);
                }
            }
        }

        let n = fit.n_rows() as f64;
        let kr = grid.n_bins(root);
        let mut root_table = vec![beta; kr];
        for &s in &states[root] {
            root_table[s] += 1.0;
        }
        let denom = n + beta * kr as f64;
        root_table.iter_mut().for_each(|v| *v /= denom);

        let mut cond = vec![Vec::new(); p];
        for j in 0..p {
            let Some(i) = parent[j] else { continue };
            let (ki, kj) = (grid.n_bins(i), grid.n_bins(j));
            let mut table = vec![vec![beta; kj]; ki];
            for (&a, &b) in states[i].iter().zip(&states[j]) {
                table[a][b] += 1.0;
            }
            for row in &mut table {
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= z);
            }
            cond[j] = table;
        }
        Ok(Self {
            grid,
            beta,
            root,
            parent,
            root_table,
            cond,
        })
    }

    /// Assemble a model from explicit tables, checking every invariant.
    pub fn from_parts(
        grid: BinGrid,
        root: usize,
        parent: Vec<Option<usize>>,
        root_table: Vec<f64>,
        cond: Vec<Vec<Vec<f64>>>,
        beta: f64,
    ) -> Result<Self, PlausibilityError> {
        let m = Self {
            grid,
            beta,
            root,
            parent,
            root_table,
            cond,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PlausibilityError> {
        let bad = |m: String| Err(PlausibilityError::InvalidModel(m));
        let p = self.grid.n_features();
        if self.parent.len() != p || self.cond.len() != p {
            return bad("parent and table lists must have one entry per feature".into());
        }
        if self.root >= p || self.grid.is_excluded(self.root) || self.parent[self.root].is_some() {
            return bad("root must be an included feature without a parent".into());
        }
        let row_ok = |row: &[f64], k: usize| {
            row.len() == k
                && row.iter().all(|v| *v > 0.0 && v.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if !row_ok(&self.root_table, self.grid.n_bins(self.root)) {
            return bad("root table must be a positive distribution over the root's bins".into());
        }
        for j in 0..p {
            if j == self.root {
                continue;
            }
            match self.parent[j] {
                None => {
                    if !self.grid.is_excluded(j) {
                        return bad(format!("included feature {j} is not connected to the tree"));
                    }
                }
                Some(i) => {
                    if i >= p || self.grid.is_excluded(i) || self.grid.is_excluded(j) {
                        return bad(format!("edge {i} -> {j} touches an excluded feature"));
                    }
                    // Walk to the root; more than p steps means a cycle.
                    let mut cur = i;
                    let mut steps = 0;
                    while let Some(up) = self.parent[cur] {
                        cur = up;
                        steps += 1;
                        if steps > p {
                            return bad("parent pointers contain a cycle".into());
                        }
                    }
                    if cur != self.root {
                        return bad(format!("feature {j} does not reach the root"));
                    }
                    let t = &self.cond[j];
                    if t.len() != self.grid.n_bins(i)
                        || !t.iter().all(|row| row_ok(row, self.grid.n_bins(j)))
                    {
                        return bad(format!(
                            "conditional table of feature {j} is not a positive distribution"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.parent.len())
            .filter_map(|j| self.parent[j].map(|i| (i, j)))
            .collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&j| self.parent[j] == Some(i))
            .collect()
    }

    /// Included features, parents before children.
    pub fn order(&self) -> Vec<usize> {
        let mut out = vec![self.root];
        let mut k = 0;
        while k < out.len() {
            let i = out[k];
            out.extend(self.children(i));
            k += 1;
        }
        out
    }

    pub fn root_table(&self) -> &[f64] {
        &self.root_table
    }

    pub fn cond_table(&self, j: usize) -> &[Vec<f64>] {
        &self.cond[j]
    }

    /// NLL term of feature `j` in state `b` given its parent's state.
    pub fn term(&self, j: usize, parent_bin: Option<usize>, b: usize) -> f64 {
        if j == self.root {
            -self.root_table[b].ln()
        } else {
            match (self.parent[j], parent_bin) {
                (Some(_), Some(pb)) => -self.cond[j][pb][b].ln(),
                _ => 0.0,
            }
        }
    }

    pub fn score_state(&self, state: &[usize]) -> f64 {
        let mut s = -self.root_table[state[self.root]].ln();
        for (j, p) in self.parent.iter().enumerate() {
            if let Some(i) = p {
                s -= self.cond[j][state[*i]][state[j]].ln();
            }
        }
        s
    }

    pub fn probability_of_state(&self, state: &[usize]) -> f64 {
        let mut prob = self.root_table[state[self.root]];
        for (j, p) in self.parent.iter().enumerate() {
            if let Some(i) = p {
                prob *= self.cond[j][state[*i]][state[j]];
            }
        }
        prob
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.score_state(&self.grid.discretize(x))
    }

    /// Add `s(x) <= tau` given one-hot bin indicators `q[j][b]` for every
    /// included feature. Returns the number of pair variables added. A
    /// non-finite threshold adds nothing.
    pub fn encode_with_bins(
        &self,
        model: &mut MilpModel,
        tau: Threshold,
        q: &[Vec<VarId>],
    ) -> usize {
        let Threshold::Finite(tau) = tau else {
            return 0;
        };
        let mut terms: Vec<(VarId, f64)> = (0..self.grid.n_bins(self.root))
            .map(|b| (q[self.root][b], -self.root_table[b].ln()))
            .collect();
        let mut added = 0;
        for (i, j) in self.edges() {
            let (ki, kj) = (self.grid.n_bins(i), self.grid.n_bins(j));
            let mut u = vec![vec![VarId(0); kj]; ki];
            for (a, row) in u.iter_mut().enumerate() {
                for (b, slot) in row.iter_mut().enumerate() {
                    let v = model.add_binary(&format!("u_{i}_{j}_{a}_{b}"));
                    *slot = v;
                    added += 1;
                    let (qa, qb) = (q[i][a], q[j][b]);
                    model.add_constraint("", vec![(v, 1.0), (qa, -1.0)], Relation::Le, 0.0);
                    model.add_constraint("", vec![(v, 1.0), (qb, -1.0)], Relation::Le, 0.0);
                    model.add_constraint(
                        "",
                        vec![(v, 1.0), (qa, -1.0), (qb, -1.0)],
                        Relation::Ge,
                        -1.0,
                    );
                    terms.push((v, -self.cond[j][a][b].ln()));
                }
            }
            // Marginal consistency; valid for the AND semantics and tightens the relaxation.
            for (a, row) in u.iter().enumerate() {
                let mut t: Vec<(VarId, f64)> = row.iter().map(|v| (*v, 1.0)).collect();
                t.push((q[i][a], -1.0));
                model.add_constraint("", t, Relation::Eq, 0.0);
            }
            for b in 0..kj {
                let mut t: Vec<(VarId, f64)> = (0..ki).map(|a| (u[a][b], 1.0)).collect();
                t.push((q[j][b], -1.0));
                model.add_constraint("", t, Relation::Eq, 0.0);
            }
        }
        model.add_constraint("cl_score", terms, Relation::Le, tau);
        added
    }
}
