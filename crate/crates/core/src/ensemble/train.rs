//! Minimal gradient-boosted tree trainer (second-order, exact greedy splits).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ensemble, EnsembleError, Tree, TreeNode};
use crate::dataio::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    /// Boosting rounds. Binary problems grow one tree per round, C-class
    /// problems grow C trees per round.
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
    /// Per-round row sampling rate in (0, 1].
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            n_rounds: 30,
            max_depth: 2,
            learning_rate: 0.3,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl BoostConfig {
    fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: &str| Err(EnsembleError::InvalidParameter(m.into()));
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if [self.reg_lambda, self.min_child_weight]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return bad("reg_lambda and min_child_weight must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a BoostConfig,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -self.cfg.learning_rate * g / (h + self.cfg.reg_lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.reg_lambda)
    }

    fn best_split(&self, idx: &[usize], g_sum: f64, h_sum: f64) -> Option<BestSplit> {
        let p = self.rows.first().map_or(0, Vec::len);
        let parent = self.score(g_sum, h_sum);
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for j in 0..p {
            order.sort_by(|&a, &b| self.rows[a][j].total_cmp(&self.rows[b][j]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                gl += self.g[i];
                hl += self.h[i];
                let a = self.rows[i][j];
                let b = self.rows[order[k + 1]][j];
                if a == b {
                    continue;
                }
                let (gr, hr) = (g_sum - gl, h_sum - hl);
                if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                if gain > 1e-12 && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if !(a <= threshold && threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        gain,
                        feature: j,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn grow(&self, idx: &[usize], depth: usize) -> TreeNode {
        let g_sum: f64 = idx.iter().map(|&i| self.g[i]).sum();
        let h_sum: f64 = idx.iter().map(|&i| self.h[i]).sum();
        if depth < self.cfg.max_depth && idx.len() >= 2 {
            if let Some(s) = self.best_split(idx, g_sum, h_sum) {
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .iter()
                    .partition(|&&i| self.rows[i][s.feature] <= s.threshold);
                return TreeNode::split(
                    s.feature,
                    s.threshold,
                    self.grow(&l, depth + 1),
                    self.grow(&r, depth + 1),
                );
            }
        }
        TreeNode::Leaf(vec![self.leaf_weight(g_sum, h_sum)])
    }
}

/// Map scalar leaves of a per-class tree to full score vectors.
fn expand(node: TreeNode, class: usize, n_classes: usize) -> TreeNode {
    match node {
        TreeNode::Leaf(v) => {
            let f = v[0];
            if n_classes == 2 {
                TreeNode::Leaf(vec![-f, f])
            } else {
                let mut out = vec![0.0; n_classes];
                out[class] = f;
                TreeNode::Leaf(out)
            }
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::split(
            feature,
            threshold,
            expand(*left, class, n_classes),
            expand(*right, class, n_classes),
        ),
    }
}

fn sigmoid(f: f64) -> f64 {
    1.0 / (1.0 + (-f).exp())
}

/// Train a boosted ensemble. Binary problems use logistic loss on the margin
/// of class index 1; multiclass problems use softmax cross-entropy.
/// All tree weights start at 1.
pub fn train_boosted(fit: &Dataset, cfg: &BoostConfig) -> Result<Ensemble, EnsembleError> {
    cfg.validate()?;
    let labels = fit
        .labels()
        .ok_or_else(|| EnsembleError::InvalidParameter("training data has no labels".into()))?;
    let first = labels.first().ok_or(EnsembleError::DegenerateLabels)?;
    if labels.iter().all(|y| y == first) {
        return Err(EnsembleError::DegenerateLabels);
    }
    let c = fit.n_classes().max(2);
    let n = fit.n_rows();
    let rows = fit.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_round = if c == 2 { 1 } else { c };
    // margins[i * per_round + k]
    let mut margins = vec![0.0; n * per_round];
    let mut trees = Vec::with_capacity(cfg.n_rounds * per_round);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];

    for _ in 0..cfg.n_rounds {
        let idx: Vec<usize> = if cfg.subsample < 1.0 {
            let s: Vec<usize> = (0..n).filter(|_| rng.random_bool(cfg.subsample)).collect();
            if s.is_empty() {
                (0..n).collect()
            } else {
                s
            }
        } else {
            (0..n).collect()
        };
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let m = &margins[i * per_round..(i + 1) * per_round];
                if c == 2 {
                    vec![sigmoid(m[0])]
                } else {
                    let mx = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let ex: Vec<f64> = m.iter().map(|v| (v - mx).exp()).collect();
                    let z: f64 = ex.iter().sum();
                    ex.into_iter().map(|v| v / z).collect()
                }
            })
            .collect();
        let mut round = Vec::with_capacity(per_round);
        for k in 0..per_round {
            for (((pr, &label), gi), hi) in
                probs.iter().zip(labels).zip(g.iter_mut()).zip(h.iter_mut())
            {
                let p = pr[k];
                let y = if c == 2 {
                    (label == 1) as u8 as f64
                } else {
                    (label == k) as u8 as f64
                };
                *gi = p - y;
                *hi = if c == 2 {
                    p * (1.0 - p)
                } else {
                    2.0 * p * (1.0 - p)
                }
                .max(1e-16);
            }
            let grower = Grower {
                rows,
                g: &g,
                h: &h,
                cfg,
            };
            let tree = Tree::from_node(&grower.grow(&idx, 0));
            round.push(tree);
        }
        for (k, tree) in round.iter().enumerate() {
            for i in 0..n {
                let leaf = tree.leaf_of(&rows[i]);
                margins[i * per_round + k] += tree.leaf_values(leaf)[0];
            }
        }
        for (k, tree) in round.into_iter().enumerate() {
            trees.push(Tree::from_node(&expand(tree.to_node(), k, c)));
        }
    }
    Ensemble::unweighted(trees, fit.n_features(), c)
}
