use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncodeContext, PlausibilityError};
use crate::conformal::Threshold;
use crate::dataio::Dataset;
use crate::milp::{MilpModel, Relation, VarId};

/// Expected unsuccessful-search length in a binary search tree of `n` keys.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let h: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
            2.0 * h - 2.0 * (n as f64 - 1.0) / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IsoNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<IsoNode>,
        right: Box<IsoNode>,
    },
    Leaf {
        size: usize,
        depth: usize,
        path_length: f64,
    },
}

impl IsoNode {
    fn route(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                IsoNode::Leaf { path_length, .. } => return *path_length,
                IsoNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    fn leaves(&self, out: &mut Vec<f64>) {
        match self {
            IsoNode::Leaf { path_length, .. } => out.push(*path_length),
            IsoNode::Split { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }

    fn n_leaves(&self) -> usize {
        match self {
            IsoNode::Leaf { .. } => 1,
            IsoNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Preorder visit of splits with the leaf-id ranges of both children.
    fn split_ranges(
        &self,
        first: usize,
        out: &mut Vec<(usize, f64, std::ops::Range<usize>, std::ops::Range<usize>)>,
    ) {
        if let IsoNode::Split {
            feature,
            threshold,
            left,
            right,
        } = self
        {
            let nl = left.n_leaves();
            let nr = right.n_leaves();
            out.push((
                *feature,
                *threshold,
                first..first + nl,
                first + nl..first + nl + nr,
            ));
            left.split_ranges(first, out);
            right.split_ranges(first + nl, out);
        }
    }

    fn check(&self, p: usize, depth: usize) -> Result<(), String> {
        match self {
            IsoNode::Leaf {
                size,
                depth: d,
                path_length,
            } => {
                if *d != depth {
                    return Err(format!("leaf records depth {d} but sits at depth {depth}"));
                }
                if (path_length - (depth as f64 + average_path_length(*size))).abs() > 1e-9 {
                    return Err("leaf path length is not depth + c(size)".into());
                }
                Ok(())
            }
            IsoNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= p || !threshold.is_finite() {
                    return Err(format!("invalid split on feature {feature}"));
                }
                left.check(p, depth + 1)?;
                right.check(p, depth + 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    n_features: usize,
    max_samples: usize,
    trees: Vec<IsoNode>,
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    cap: usize,
}

impl Grower<'_> {
    fn grow(&self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> IsoNode {
        let leaf = || IsoNode::Leaf {
            size: 0,
            depth,
            path_length: 0.0,
        };
        if idx.len() <= 1 || depth >= self.cap {
            return leaf();
        }
        let p = self.rows[0].len();
        let ranges: Vec<(usize, f64, f64)> = (0..p)
            .filter_map(|j| {
                let (lo, hi) = idx
                    .iter()
                    .map(|&i| self.rows[i][j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                        (a.min(v), b.max(v))
                    });
                (lo < hi).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return leaf();
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let mut threshold = rng.random_range(lo..hi);
        if threshold >= hi {
            threshold = lo;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.rows[i][feature] <= threshold);
        IsoNode::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&l, depth + 1, rng)),
            right: Box::new(self.grow(&r, depth + 1, rng)),
        }
    }
}

fn fill_leaf_sizes(node: &mut IsoNode, rows: &[&Vec<f64>]) {
    match node {
        IsoNode::Leaf {
            size,
            depth,
            path_length,
        } => {
            *size = rows.len();
            *path_length = *depth as f64 + average_path_length(rows.len());
        }
        IsoNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let (l, r): (Vec<&Vec<f64>>, Vec<&Vec<f64>>) =
                rows.iter().partition(|x| x[*feature] <= *threshold);
            fill_leaf_sizes(left, &l);
            fill_leaf_sizes(right, &r);
        }
    }
}

impl IsolationForestModel {
    /// Grow `k` isolation trees on subsamples of size `min(max_samples, n)`
    /// with depth cap `ceil(log2 psi)`. Leaf sizes, and hence the corrected
    /// path lengths, are counted over the whole fit set.
    pub fn fit(
        fit: &Dataset,
        k: usize,
        max_samples: usize,
        seed: u64,
    ) -> Result<Self, PlausibilityError> {
        if k == 0 {
            return Err(PlausibilityError::InvalidParameter(
                "need at least one isolation tree".into(),
            ));
        }
        if max_samples < 2 {
            return Err(PlausibilityError::InvalidParameter(
                "max_samples must be at least 2".into(),
            ));
        }
        if fit.n_rows() < 2 {
            return Err(PlausibilityError::TooFewSamples {
                needed: 2,
                found: fit.n_rows(),
            });
        }
        let n = fit.n_rows();
        let psi = max_samples.min(n);
        let cap = (psi as f64).log2().ceil() as usize;
        let grower = Grower {
            rows: fit.rows(),
            cap,
        };
        let all: Vec<&Vec<f64>> = fit.rows().iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..k)
            .map(|_| {
                let mut idx = sample(&mut rng, n, psi).into_vec();
                idx.sort_unstable();
                let mut root = grower.grow(&idx, 0, &mut rng);
                fill_leaf_sizes(&mut root, &all);
                root
            })
            .collect();
        Ok(Self {
            n_features: fit.n_features(),
            max_samples,
            trees,
        })
    }

    pub fn from_trees(
        n_features: usize,
        max_samples: usize,
        trees: Vec<IsoNode>,
    ) -> Result<Self, PlausibilityError> {
        let m = Self {
            n_features,
            max_samples,
            trees,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PlausibilityError> {
        if self.trees.is_empty() {
            return Err(PlausibilityError::InvalidModel(
                "isolation forest has no trees".into(),
            ));
        }
        for (k, t) in self.trees.iter().enumerate() {
            t.check(self.n_features, 0)
                .map_err(|m| PlausibilityError::InvalidModel(format!("isolation tree {k}: {m}")))?;
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[IsoNode] {
        &self.trees
    }

    /// Mean corrected path length `L(x)`.
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.route(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        -self.mean_path_length(x)
    }

    pub fn thresholds(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n_features];
        for t in &self.trees {
            let mut splits = Vec::new();
            t.split_ranges(0, &mut splits);
            for (f, th, _, _) in splits {
                out[f].push(th);
            }
        }
        out
    }

    /// Leaf indicators `g` per isolation tree, linked to the interval
    /// variables by one pair of rows per split, plus the averaged score row.
    pub fn encode(
        &self,
        model: &mut MilpModel,
        ctx: &EncodeContext,
        tau: Threshold,
    ) -> Result<(), PlausibilityError> {
        let Threshold::Finite(tau) = tau else {
            return Ok(());
        };
        let inv_k = 1.0 / self.trees.len() as f64;
        let mut score_terms = Vec::new();
        for (k, tree) in self.trees.iter().enumerate() {
            let mut h = Vec::new();
            tree.leaves(&mut h);
            let g: Vec<VarId> = (0..h.len())
                .map(|l| model.add_binary(&format!("g_{k}_{l}")))
                .collect();
            model.add_constraint(
                &format!("gsum_{k}"),
                g.iter().map(|v| (*v, 1.0)).collect(),
                Relation::Eq,
                1.0,
            );
            let mut splits = Vec::new();
            tree.split_ranges(0, &mut splits);
            for (f, th, left, right) in splits {
                let mu = ctx.mu_at(f, th)?;
                let mut lt: Vec<(VarId, f64)> = left.map(|l| (g[l], 1.0)).collect();
                lt.push((mu, -1.0));
                model.add_constraint("", lt, Relation::Le, 0.0);
                let mut rt: Vec<(VarId, f64)> = right.map(|l| (g[l], 1.0)).collect();
                rt.push((mu, 1.0));
                model.add_constraint("", rt, Relation::Le, 1.0);
            }
            score_terms.extend(g.iter().zip(&h).map(|(v, hl)| (*v, -inv_k * hl)));
        }
        model.add_constraint("if_score", score_terms, Relation::Le, tau);
        Ok(())
    }
}
