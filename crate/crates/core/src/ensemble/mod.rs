//! Weighted ensembles of axis-aligned decision trees.
//!
//! Routing is `x[feature] <= threshold` goes left everywhere in the crate,
//! including the MILP encodings and the exhaustive verifier.

mod io;
mod train;

pub use io::{
    ensemble_from_json, ensemble_to_json, load_ensemble, parse_text_dump, save_ensemble,
    TextDumpOptions,
};
pub use train::{train_boosted, BoostConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid ensemble: {0}")]
    Invalid(String),
    #[error("labels contain a single class; nothing to separate")]
    DegenerateLabels,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("text dump line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Recursive tree description, the shape used by the JSON format.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(Vec<f64>),
}

impl TreeNode {
    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn leaf(scores: impl Into<Vec<f64>>) -> Self {
        TreeNode::Leaf(scores.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(usize),
}

/// Internal node of a tree together with the leaves under each child.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitInfo {
    pub feature: usize,
    pub threshold: f64,
    pub left_leaves: Vec<usize>,
    pub right_leaves: Vec<usize>,
}

/// Arena-backed tree. Node 0 is the root; leaves are numbered in left-first
/// preorder, so leaf ids are stable across save/load.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    leaf_values: Vec<Vec<f64>>,
}

impl Tree {
    pub fn from_node(root: &TreeNode) -> Self {
        let mut tree = Tree {
            nodes: Vec::new(),
            leaf_values: Vec::new(),
        };
        tree.push(root);
        tree
    }

    fn push(&mut self, node: &TreeNode) -> usize {
        let idx = self.nodes.len();
        match node {
            TreeNode::Leaf(scores) => {
                self.nodes.push(Node::Leaf(self.leaf_values.len()));
                self.leaf_values.push(scores.clone());
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                self.nodes.push(Node::Leaf(usize::MAX));
                let l = self.push(left);
                let r = self.push(right);
                self.nodes[idx] = Node::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: l,
                    right: r,
                };
            }
        }
        idx
    }

    pub fn to_node(&self) -> TreeNode {
        self.node_at(0)
    }

    fn node_at(&self, idx: usize) -> TreeNode {
        match self.nodes[idx] {
            Node::Leaf(l) => TreeNode::Leaf(self.leaf_values[l].clone()),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => TreeNode::split(feature, threshold, self.node_at(left), self.node_at(right)),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_values.len()
    }

    pub fn leaf_values(&self, leaf: usize) -> &[f64] {
        &self.leaf_values[leaf]
    }

    pub fn all_leaf_values(&self) -> &[Vec<f64>] {
        &self.leaf_values
    }

    /// Leaf reached by `x`. `x` must have at least as many entries as the
    /// largest feature index used by the tree.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(l) => return l,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, idx: usize) -> usize {
            match t.nodes[idx] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + rec(t, left).max(rec(t, right)),
            }
        }
        rec(self, 0)
    }

    /// Depth of every leaf, indexed by leaf id.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut depths = vec![0; self.n_leaves()];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((idx, d)) = stack.pop() {
            match self.nodes[idx] {
                Node::Leaf(l) => depths[l] = d,
                Node::Split { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
            }
        }
        depths
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf(_) => None,
        })
    }

    fn leaves_under(&self, idx: usize, out: &mut Vec<usize>) {
        match self.nodes[idx] {
            Node::Leaf(l) => out.push(l),
            Node::Split { left, right, .. } => {
                self.leaves_under(left, out);
                self.leaves_under(right, out);
            }
        }
    }

    /// Every internal node with the leaf sets of its two subtrees, in preorder.
    pub fn split_infos(&self) -> Vec<SplitInfo> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut left_leaves = Vec::new();
                    let mut right_leaves = Vec::new();
                    self.leaves_under(left, &mut left_leaves);
                    self.leaves_under(right, &mut right_leaves);
                    Some(SplitInfo {
                        feature,
                        threshold,
                        left_leaves,
                        right_leaves,
                    })
                }
                Node::Leaf(_) => None,
            })
            .collect()
    }

    fn max_feature(&self) -> Option<usize> {
        self.splits().map(|(f, _)| f).max()
    }
}

/// Trees with per-tree non-negative weights and an unweighted bias vector.
///
/// The bias models a boosting base score: it acts like one extra
/// always-active single-leaf tree with fixed weight 1 that is never pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<Tree>,
    weights: Vec<f64>,
    n_features: usize,
    n_classes: usize,
    bias: Vec<f64>,
}

impl Ensemble {
    pub fn new(
        trees: Vec<Tree>,
        weights: Vec<f64>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, EnsembleError> {
        Self::with_bias(trees, weights, n_features, n_classes, vec![0.0; n_classes])
    }

    pub fn with_bias(
        trees: Vec<Tree>,
        weights: Vec<f64>,
        n_features: usize,
        n_classes: usize,
        bias: Vec<f64>,
    ) -> Result<Self, EnsembleError> {
        if trees.is_empty() {
            return Err(EnsembleError::Invalid(
                "ensemble needs at least one tree".into(),
            ));
        }
        if n_classes < 2 {
            return Err(EnsembleError::Invalid("need at least two classes".into()));
        }
        if weights.len() != trees.len() {
            return Err(EnsembleError::DimensionMismatch {
                expected: trees.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EnsembleError::Invalid(
                "weights must be finite and non-negative".into(),
            ));
        }
        if bias.len() != n_classes || bias.iter().any(|b| !b.is_finite()) {
            return Err(EnsembleError::Invalid(
                "bias must be a finite vector of length C".into(),
            ));
        }
        for (m, tree) in trees.iter().enumerate() {
            if let Some(f) = tree.max_feature() {
                if f >= n_features {
                    return Err(EnsembleError::Invalid(format!(
                        "tree {m} splits on feature {f} but n_features = {n_features}"
                    )));
                }
            }
            if tree.splits().any(|(_, t)| !t.is_finite()) {
                return Err(EnsembleError::Invalid(format!(
                    "tree {m} has a non-finite threshold"
                )));
            }
            for v in tree.all_leaf_values() {
                if v.len() != n_classes || v.iter().any(|s| !s.is_finite()) {
                    return Err(EnsembleError::Invalid(format!(
                        "tree {m} has a leaf that is not a finite vector of length {n_classes}"
                    )));
                }
            }
        }
        Ok(Self {
            trees,
            weights,
            n_features,
            n_classes,
            bias,
        })
    }

    /// Unit weights for every tree.
    pub fn unweighted(
        trees: Vec<Tree>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, EnsembleError> {
        let m = trees.len();
        Self::new(trees, vec![1.0; m], n_features, n_classes)
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// The original weights `w0`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn has_bias(&self) -> bool {
        self.bias.iter().any(|b| *b != 0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn max_abs_leaf(&self) -> f64 {
        self.trees
            .iter()
            .flat_map(|t| t.all_leaf_values().iter().flatten())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    fn check_dims(&self, w: &[f64], x: &[f64]) -> Result<(), EnsembleError> {
        if w.len() != self.trees.len() {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.trees.len(),
                found: w.len(),
            });
        }
        if x.len() != self.n_features {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Leaf reached in every tree.
    pub fn leaves_of(&self, x: &[f64]) -> Vec<usize> {
        self.trees.iter().map(|t| t.leaf_of(x)).collect()
    }

    /// Class scores for a given leaf assignment (one leaf per tree).
    pub fn scores_from_leaves(&self, w: &[f64], leaves: &[usize]) -> Vec<f64> {
        let mut scores = self.bias.clone();
        for ((tree, &wm), &leaf) in self.trees.iter().zip(w).zip(leaves) {
            if wm == 0.0 {
                continue;
            }
            for (s, v) in scores.iter_mut().zip(tree.leaf_values(leaf)) {
                *s += wm * v;
            }
        }
        scores
    }

    pub fn predict_scores(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>, EnsembleError> {
        self.check_dims(w, x)?;
        Ok(self.scores_from_leaves(w, &self.leaves_of(x)))
    }

    pub fn predict_class(&self, w: &[f64], x: &[f64]) -> Result<usize, EnsembleError> {
        Ok(argmax(&self.predict_scores(w, x)?))
    }

    pub fn class_from_leaves(&self, w: &[f64], leaves: &[usize]) -> usize {
        argmax(&self.scores_from_leaves(w, leaves))
    }

    /// Predicted class under the original weights.
    pub fn predict_original(&self, x: &[f64]) -> Result<usize, EnsembleError> {
        self.predict_class(&self.weights, x)
    }

    /// Same trees with different original weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self, EnsembleError> {
        Self::with_bias(
            self.trees.clone(),
            weights,
            self.n_features,
            self.n_classes,
            self.bias.clone(),
        )
    }
}

/// Index of the maximum score; ties go to the smallest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = c;
        }
    }
    best
}

/// Number of non-zero weights.
pub fn support_size(w: &[f64]) -> usize {
    w.iter().filter(|v| **v != 0.0).count()
}

/// Sorted, deduplicated split thresholds per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdIndex {
    per_feature: Vec<Vec<f64>>,
}

impl ThresholdIndex {
    pub fn from_lists(mut per_feature: Vec<Vec<f64>>) -> Self {
        for list in &mut per_feature {
            list.retain(|t| t.is_finite());
            list.sort_by(f64::total_cmp);
            list.dedup_by(|a, b| a == b);
        }
        Self { per_feature }
    }

    /// Thresholds of every tree, optionally merged with extra per-feature lists.
    pub fn from_ensemble(e: &Ensemble, extra: Option<&[Vec<f64>]>) -> Self {
        let mut lists = vec![Vec::new(); e.n_features()];
        for tree in e.trees() {
            for (f, t) in tree.splits() {
                lists[f].push(t);
            }
        }
        if let Some(extra) = extra {
            for (j, list) in extra.iter().enumerate().take(lists.len()) {
                lists[j].extend_from_slice(list);
            }
        }
        Self::from_lists(lists)
    }

    pub fn merged(&self, extra: &[Vec<f64>]) -> Self {
        let mut lists = self.per_feature.clone();
        for (j, list) in extra.iter().enumerate().take(lists.len()) {
            lists[j].extend_from_slice(list);
        }
        Self::from_lists(lists)
    }

    pub fn n_features(&self) -> usize {
        self.per_feature.len()
    }

    pub fn thresholds(&self, j: usize) -> &[f64] {
        &self.per_feature[j]
    }

    pub fn all(&self) -> &[Vec<f64>] {
        &self.per_feature
    }

    /// Position of `t` in feature `j`'s list (exact match).
    pub fn position(&self, j: usize, t: f64) -> Option<usize> {
        self.per_feature[j]
            .binary_search_by(|v| v.total_cmp(&t))
            .ok()
    }

    pub fn contains(&self, j: usize, t: f64) -> bool {
        self.per_feature[j].contains(&t)
    }

    /// Intervals on axis `j`: `(-inf, t0], (t0, t1], ..., (t_last, +inf)`.
    pub fn n_intervals(&self, j: usize) -> usize {
        self.per_feature[j].len() + 1
    }

    /// Interval index holding `x` (number of thresholds strictly below it).
    pub fn interval_of(&self, j: usize, x: f64) -> usize {
        self.per_feature[j].partition_point(|t| *t < x)
    }

    /// Point inside interval `k` of axis `j`: the right endpoint when finite,
    /// `t_last + 1` for the unbounded right interval, and 0 for an axis without
    /// thresholds.
    pub fn representative(&self, j: usize, k: usize) -> f64 {
        let list = &self.per_feature[j];
        if list.is_empty() {
            0.0
        } else if k < list.len() {
            list[k]
        } else {
            list[list.len() - 1] + 1.0
        }
    }

    /// Total number of cells, or `None` on overflow.
    pub fn n_cells(&self) -> Option<u128> {
        self.per_feature
            .iter()
            .try_fold(1u128, |acc, l| acc.checked_mul(l.len() as u128 + 1))
    }
}
