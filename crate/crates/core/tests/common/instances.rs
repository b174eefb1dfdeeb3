//! Random desk-scale instances shared by the integration tests.

use pine_core::conformal::Threshold;
use pine_core::dataio::Dataset;
use pine_core::ensemble::{Ensemble, ThresholdIndex, Tree, TreeNode};
use pine_core::milp::{solve, MilpModel, Relation, SolveOptions, Status, VarId};
use pine_core::oracle::reconstruct_point;
use pine_core::pine::PineConfig;
use pine_core::plausibility::{BinGrid, ChowLiuModel, EncodeContext, ScoreModel};
use pine_core::verify::CellIterator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Thresholds are drawn from this set so every feature stays on a small grid.
pub const GRID: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

/// Smallest gap between the best and second-best class score allowed in any
/// cell of a generated ensemble.
pub const MIN_MARGIN: f64 = 1e-3;

pub struct Instance {
    pub e: Ensemble,
    pub fit: Dataset,
    pub cal: Dataset,
    pub test: Dataset,
}

fn random_node(
    rng: &mut ChaCha8Rng,
    depth: usize,
    max_depth: usize,
    p: usize,
    c: usize,
) -> TreeNode {
    if depth == max_depth || (depth > 0 && rng.random_bool(0.25)) {
        return TreeNode::leaf(
            (0..c)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        );
    }
    let feature = rng.random_range(0..p);
    let threshold = GRID[rng.random_range(0..GRID.len())];
    TreeNode::split(
        feature,
        threshold,
        random_node(rng, depth + 1, max_depth, p, c),
        random_node(rng, depth + 1, max_depth, p, c),
    )
}

/// Smallest top-two score gap over every cell, with the ensemble's weights.
pub fn min_cell_margin(e: &Ensemble) -> f64 {
    let theta = ThresholdIndex::from_ensemble(e, None);
    CellIterator::new(&theta)
        .map(|cell| {
            let x = reconstruct_point(&theta, &cell);
            let mut s = e.predict_scores(e.weights(), &x).unwrap();
            s.sort_by(|a, b| b.total_cmp(a));
            s[0] - s[1]
        })
        .fold(f64::INFINITY, f64::min)
}

fn sample(rng: &mut ChaCha8Rng, e: &Ensemble, n: usize) -> Dataset {
    let noise = Normal::new(0.0, 0.5).unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let x0: f64 = rng.random_range(0.0..3.0);
            (0..e.n_features())
                .map(|j| {
                    if j == 0 {
                        x0
                    } else {
                        (x0 + noise.sample(rng)).clamp(0.0, 3.0)
                    }
                })
                .collect()
        })
        .collect();
    let labels = rows
        .iter()
        .map(|x| e.predict_original(x).unwrap())
        .collect();
    Dataset::from_rows(rows, Some(labels), e.n_classes()).unwrap()
}

/// 2 or 3 features, 3 to 6 trees of depth <= 2, margins above
/// [`MIN_MARGIN`] everywhere; fit/cal/test sets of 40/30/30 points labeled by
/// the ensemble itself.
pub fn desk_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let p = rng.random_range(2..=3);
        let m = rng.random_range(3..=6);
        let d = if rng.random_bool(0.75) { 2 } else { 1 };
        let c = if rng.random_bool(0.3) { 3 } else { 2 };
        let trees = (0..m)
            .map(|_| Tree::from_node(&random_node(&mut rng, 0, d, p, c)))
            .collect();
        let e = Ensemble::unweighted(trees, p, c).unwrap();
        if min_cell_margin(&e) <= MIN_MARGIN {
            continue;
        }
        let fit = sample(&mut rng, &e, 40);
        let cal = sample(&mut rng, &e, 30);
        let test = sample(&mut rng, &e, 30);
        return Instance { e, fit, cal, test };
    }
}

/// Loop settings for desk instances: three bins per feature.
pub fn desk_config(alpha: Option<f64>) -> PineConfig {
    let mut cfg = PineConfig {
        alpha,
        fipe: alpha.is_none(),
        ..PineConfig::default()
    };
    cfg.score.bins = 3;
    cfg
}

fn random_table(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = v.iter().sum();
    v.into_iter().map(|x| x / z).collect()
}

/// Random tree-structured model over `p` features with `b` states each; the
/// grid boundaries are `0, 1, ..., b - 2`.
pub fn random_chow_liu(rng: &mut ChaCha8Rng, p: usize, b: usize) -> ChowLiuModel {
    let root = rng.random_range(0..p);
    let mut order: Vec<usize> = (0..p).filter(|&j| j != root).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut placed = vec![root];
    let mut parent = vec![None; p];
    for j in order {
        parent[j] = Some(placed[rng.random_range(0..placed.len())]);
        placed.push(j);
    }
    let root_table = random_table(rng, b);
    let cond = (0..p)
        .map(|j| match parent[j] {
            None => Vec::new(),
            Some(_) => (0..b).map(|_| random_table(rng, b)).collect(),
        })
        .collect();
    let grid = BinGrid::from_boundaries(vec![(0..b - 1).map(|v| v as f64).collect(); p]).unwrap();
    ChowLiuModel::from_parts(grid, root, parent, root_table, cond, 1.0).unwrap()
}

/// Interval variables over a model's own grid, with the monotone chain rows.
pub fn interval_model(m: &ChowLiuModel) -> (MilpModel, ThresholdIndex, Vec<Vec<VarId>>) {
    let p = m.grid().n_features();
    let theta =
        ThresholdIndex::from_lists((0..p).map(|j| m.grid().boundaries(j).to_vec()).collect());
    let mut model = MilpModel::new();
    let mu: Vec<Vec<VarId>> = (0..p)
        .map(|j| {
            (0..theta.thresholds(j).len())
                .map(|k| model.add_binary(&format!("mu_{j}_{k}")))
                .collect()
        })
        .collect();
    for (j, row) in mu.iter().enumerate() {
        for k in 1..row.len() {
            model.add_constraint(
                &format!("chain_{j}_{k}"),
                vec![(row[k - 1], 1.0), (row[k], -1.0)],
                Relation::Le,
                0.0,
            );
        }
    }
    (model, theta, mu)
}

/// Whether the full Chow-Liu encoding at `tau` admits the given state, with
/// every interval variable fixed to it.
pub fn encoding_admits(m: &ChowLiuModel, tau: f64, state: &[usize]) -> bool {
    let (mut model, theta, mu) = interval_model(m);
    for (j, row) in mu.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let val = if k >= state[j] { 1.0 } else { 0.0 };
            model.add_constraint("", vec![(*v, 1.0)], Relation::Eq, val);
        }
    }
    let ctx = EncodeContext {
        theta: &theta,
        mu: &mu,
        leaf_vars: &[],
    };
    ScoreModel::ChowLiu(m.clone())
        .encode(&mut model, &ctx, Threshold::Finite(tau))
        .unwrap();
    let sol = solve(&model, &SolveOptions::default()).unwrap();
    match sol.status {
        Status::Optimal => true,
        Status::Infeasible => false,
        s => panic!("uncertified status {s:?}"),
    }
}

/// All states of a model's grid, in lexicographic order.
pub fn all_states(m: &ChowLiuModel) -> Vec<Vec<usize>> {
    let p = m.grid().n_features();
    let mut out = vec![Vec::new()];
    for j in 0..p {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..m.grid().n_bins(j)).map(move |b| {
                    let mut t = s.clone();
                    t.push(b);
                    t
                })
            })
            .collect();
    }
    out
}
