//! Seeded synthetic data: two interleaved half-circles, and samples from a
//! random tree-factorized categorical distribution with its exact model.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataError, Dataset};
use crate::plausibility::{BinGrid, ChowLiuModel, PlausibilityError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Plausibility(#[from] PlausibilityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoonsSpec {
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for MoonsSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            noise: 0.2,
            seed: 0,
        }
    }
}

fn linspace_pi(k: usize) -> impl Iterator<Item = f64> {
    (0..k).map(move |i| {
        if k == 1 {
            0.0
        } else {
            PI * i as f64 / (k - 1) as f64
        }
    })
}

/// Class 0 on the upper unit half-circle, class 1 on the lower one shifted
/// by `(1, -0.5)`; `n / 2` points go to class 0. Gaussian noise, then a
/// shuffle.
pub fn gen_moons(spec: &MoonsSpec) -> Result<Dataset, SynthError> {
    if spec.n < 2 {
        return Err(SynthError::InvalidParameter("moons need n >= 2".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(SynthError::InvalidParameter(
            "noise must be non-negative".into(),
        ));
    }
    let n_out = spec.n / 2;
    let n_in = spec.n - n_out;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pts: Vec<(Vec<f64>, usize)> = linspace_pi(n_out)
        .map(|t| (vec![t.cos(), t.sin()], 0))
        .chain(linspace_pi(n_in).map(|t| (vec![1.0 - t.cos(), 1.0 - t.sin() - 0.5], 1)))
        .collect();
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("valid noise");
        for (x, _) in &mut pts {
            for v in x.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    pts.shuffle(&mut rng);
    let (rows, labels): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
    Ok(Dataset::from_rows(rows, Some(labels), 2)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeDistSpec {
    pub p: usize,
    pub states: usize,
    /// Symmetric Dirichlet concentration of every table row.
    pub concentration: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for TreeDistSpec {
    fn default() -> Self {
        Self {
            p: 3,
            states: 3,
            concentration: 1.0,
            n: 1000,
            seed: 0,
        }
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, k: usize, conc: f64) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive concentration");
    let mut v: Vec<f64> = (0..k).map(|_| g.sample(rng).max(1e-300)).collect();
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    v
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Random tree over `p` features (root 0, parent of `j` uniform in `0..j`)
/// with Dirichlet tables. States are the integers `0..B`, and the returned
/// model's grid has boundaries `0, 1, ..., B-2` so each state is its own bin.
pub fn gen_tree_dist(spec: &TreeDistSpec) -> Result<(Dataset, ChowLiuModel), SynthError> {
    if spec.p == 0 || spec.states < 2 {
        return Err(SynthError::InvalidParameter(
            "need p >= 1 and at least two states".into(),
        ));
    }
    if !(spec.concentration > 0.0 && spec.concentration.is_finite()) {
        return Err(SynthError::InvalidParameter(
            "concentration must be positive".into(),
        ));
    }
    let (p, b) = (spec.p, spec.states);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let parent: Vec<Option<usize>> = (0..p)
        .map(|j| (j > 0).then(|| rng.random_range(0..j)))
        .collect();
    let root_table = dirichlet(&mut rng, b, spec.concentration);
    let cond: Vec<Vec<Vec<f64>>> = (0..p)
        .map(|j| {
            if j == 0 {
                Vec::new()
            } else {
                (0..b)
                    .map(|_| dirichlet(&mut rng, b, spec.concentration))
                    .collect()
            }
        })
        .collect();
    let grid = BinGrid::from_boundaries(vec![(0..b - 1).map(|v| v as f64).collect(); p])?;
    let model = ChowLiuModel::from_parts(
        grid,
        0,
        parent.clone(),
        root_table.clone(),
        cond.clone(),
        spec.concentration,
    )?;
    let rows = (0..spec.n)
        .map(|_| {
            let mut s = vec![0usize; p];
            s[0] = draw(&mut rng, &root_table);
            for j in 1..p {
                let pa = parent[j].expect("non-root");
                s[j] = draw(&mut rng, &cond[j][s[pa]]);
            }
            s.into_iter().map(|v| v as f64).collect()
        })
        .collect();
    Ok((Dataset::from_rows(rows, None, 0)?, model))
}
