//! Resolved run configuration. Loaded from JSON, then overridden by flags,
//! and echoed into every JSON artifact.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use pine_core::ensemble::BoostConfig;
use pine_core::eval::{DEFAULT_DELTA, SWEEP_GRID};
use pine_core::pine::PineConfig;
use pine_core::synth::{MoonsSpec, TreeDistSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Name of the label column in every CSV.
    pub label: String,
    pub split: SplitConfig,
    pub train: BoostConfig,
    pub pine: PineConfig,
    pub select: SelectConfig,
    pub verify: VerifyConfig,
    pub moons: MoonsSpec,
    pub tree_dist: TreeDistSpec,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: "label".into(),
            split: SplitConfig::default(),
            train: BoostConfig::default(),
            pine: PineConfig::default(),
            select: SelectConfig::default(),
            verify: VerifyConfig::default(),
            moons: MoonsSpec::default(),
            tree_dist: TreeDistSpec::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.64, 0.16, 0.20],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Empirical,
    ConfidenceBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub selector: SelectorKind,
    pub delta: f64,
    pub rho_star: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            selector: SelectorKind::Empirical,
            delta: DEFAULT_DELTA,
            rho_star: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub cell_cap: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            cell_cap: pine_core::verify::DEFAULT_CELL_CAP as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    /// Moons size used when no data file is given.
    pub moons_n: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            alphas: SWEEP_GRID.to_vec(),
            moons_n: 500,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}
