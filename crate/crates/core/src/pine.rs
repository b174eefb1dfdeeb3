//! The Pruner/Oracle constraint-generation loop, in-distribution (PINE) or
//! full-space (FIPE).

use std::collections::HashSet;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{calibrate, CalibrationResult, ConformalError, Threshold};
use crate::dataio::Dataset;
use crate::ensemble::{support_size, Ensemble};
use crate::milp::{SolveOptions, Status};
use crate::oracle::{Oracle, OracleConfig, OracleError};
use crate::plausibility::{PlausibilityError, ScoreConfig, ScoreKind, ScoreModel};
use crate::pruner::{
    default_epsilon, effective_epsilon, solve_pruner, ConstraintPoint, PruneObjective, PrunerError,
};

#[derive(Debug, Error)]
pub enum PineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("fit set has {found} features, ensemble expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Plausibility(#[from] PlausibilityError),
    #[error(transparent)]
    Pruner(#[from] PrunerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PineConfig {
    /// Miscoverage level; ignored in full-space mode.
    pub alpha: Option<f64>,
    pub fipe: bool,
    pub score_kind: ScoreKind,
    pub score: ScoreConfig,
    pub objective: PruneObjective,
    /// Pruner strict margin; defaults to `1e-6 * max|v| * W_total`.
    pub pruner_epsilon: Option<f64>,
    pub pruner_solve: SolveOptions,
    pub oracle: OracleConfig,
    pub max_iterations: usize,
}

impl Default for PineConfig {
    fn default() -> Self {
        Self {
            alpha: Some(0.2),
            fipe: false,
            score_kind: ScoreKind::ChowLiu,
            score: ScoreConfig::default(),
            objective: PruneObjective::L0,
            pruner_epsilon: None,
            pruner_solve: SolveOptions::default(),
            oracle: OracleConfig::default(),
            max_iterations: 10_000,
        }
    }
}

impl PineConfig {
    pub fn validate(&self) -> Result<(), PineError> {
        if self.max_iterations == 0 {
            return Err(PineError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        match (self.fipe, self.alpha) {
            (false, None) => Err(PineError::InvalidConfig(
                "alpha is required unless fipe is set".into(),
            )),
            (false, Some(a)) if !(a > 0.0 && a < 1.0) => Err(PineError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {a}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuaranteeScope {
    FullSpace,
    InDistribution,
    Uncertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Certified,
    OracleUncertified,
    PrunerUncertified,
    MaxIterations,
    RepeatedCounterexample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_constraints: usize,
    pub pruner_objective: f64,
    pub support: usize,
    pub pruner_status: Status,
    pub pruner_time_s: f64,
    pub oracle_certified: bool,
    pub counterexamples: usize,
    pub oracle_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub weights: Vec<f64>,
    pub support: usize,
    pub n_trees: usize,
    pub iterations: usize,
    pub records: Vec<IterationRecord>,
    pub tau: Threshold,
    pub alpha: Option<f64>,
    pub calibration: Option<CalibrationResult>,
    pub certified: bool,
    pub guarantee_scope: GuaranteeScope,
    pub stop_reason: StopReason,
    /// Every Pruner solve in the loop was proven optimal.
    pub sparsity_optimal: bool,
    pub epsilon: f64,
    pub wall_time_s: f64,
}

impl PruneResult {
    pub fn pruning_rate(&self) -> f64 {
        1.0 - self.support as f64 / self.n_trees as f64
    }
}

/// Output of [`run`]: the loop result and the fitted score model.
#[derive(Debug, Clone)]
pub struct PineRun {
    pub result: PruneResult,
    pub score: Option<ScoreModel>,
}

/// Fit the score on `fit`, calibrate on `cal`, then run the loop. In
/// full-space mode the score and calibration steps are skipped.
pub fn run(
    e: &Ensemble,
    fit: &Dataset,
    cal: &Dataset,
    cfg: &PineConfig,
) -> Result<PineRun, PineError> {
    cfg.validate()?;
    if cfg.fipe {
        return Ok(PineRun {
            result: run_fipe(e, fit, cfg)?,
            score: None,
        });
    }
    let alpha = cfg.alpha.expect("validated");
    let score = ScoreModel::fit(cfg.score_kind, &cfg.score, e, fit)?;
    let cal_scores = score.scores(e, cal);
    let calib = calibrate(&cal_scores, alpha)?;
    info!(
        "calibrated tau = {:?} (k = {}, n = {})",
        calib.tau, calib.k, calib.n
    );
    let mut result = prune_loop(e, fit, Some((&score, calib.tau)), cfg)?;
    result.alpha = Some(alpha);
    result.calibration = Some(calib);
    Ok(PineRun {
        result,
        score: Some(score),
    })
}

/// Full-space equivalence: the loop with the plausibility constraint off.
pub fn run_fipe(e: &Ensemble, fit: &Dataset, cfg: &PineConfig) -> Result<PruneResult, PineError> {
    prune_loop(e, fit, None, cfg)
}

/// The alternating loop, warm-started with the fit set. `region` restricts
/// the Oracle to `s(x) <= tau`; `None` or an unbounded threshold searches the
/// whole space.
pub fn prune_loop(
    e: &Ensemble,
    fit: &Dataset,
    region: Option<(&ScoreModel, Threshold)>,
    cfg: &PineConfig,
) -> Result<PruneResult, PineError> {
    cfg.validate()?;
    if fit.n_features() != e.n_features() {
        return Err(PineError::DimensionMismatch {
            expected: e.n_features(),
            found: fit.n_features(),
        });
    }
    let start = Instant::now();
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for x in fit.rows() {
        let p = ConstraintPoint::from_point(e, x);
        if seen.insert(p.clone()) {
            points.push(p);
        }
    }
    let mut eps = effective_epsilon(
        e,
        &points,
        cfg.objective,
        cfg.pruner_epsilon.unwrap_or_else(|| default_epsilon(e)),
    )?;
    let oracle = Oracle::new(e, region, cfg.oracle.clone());
    let tau = region.map_or(Threshold::Unbounded, |(_, t)| t);
    let in_distribution = region.is_some();

    let mut records = Vec::new();
    let mut tightened = false;
    let mut sparsity_optimal = true;
    let mut weights = e.weights().to_vec();
    let mut stop = StopReason::MaxIterations;
    for iteration in 1..=cfg.max_iterations {
        let sol = match solve_pruner(e, &points, cfg.objective, eps, &cfg.pruner_solve) {
            Ok(s) => s,
            Err(PrunerError::SolverUncertified) => {
                stop = StopReason::PrunerUncertified;
                break;
            }
            Err(err) => return Err(err.into()),
        };
        sparsity_optimal &= sol.optimal;
        weights = sol.weights.clone();
        let oracle_res = oracle.find_counterexamples(&weights)?;
        records.push(IterationRecord {
            iteration,
            n_constraints: points.len(),
            pruner_objective: sol.objective_value,
            support: sol.support,
            pruner_status: sol.status,
            pruner_time_s: sol.wall_time_s,
            oracle_certified: oracle_res.certified,
            counterexamples: oracle_res.found.len(),
            oracle_time_s: oracle_res.wall_time_s,
        });
        info!(
            "iteration {iteration}: |S| = {}, support {}, {} counterexamples",
            points.len(),
            sol.support,
            oracle_res.found.len()
        );
        if oracle_res.found.is_empty() {
            stop = if oracle_res.certified {
                StopReason::Certified
            } else {
                StopReason::OracleUncertified
            };
            break;
        }
        let mut added = 0;
        for cex in &oracle_res.found {
            let p = ConstraintPoint {
                leaves: cex.cell.leaves.clone(),
                class: cex.original_class,
            };
            if seen.insert(p.clone()) {
                points.push(p);
                added += 1;
            }
        }
        if added == 0 {
            if tightened {
                warn!("counterexample re-appeared after tightening the pruner margin");
                stop = StopReason::RepeatedCounterexample;
                break;
            }
            warn!("counterexample re-appeared; tightening the pruner margin once");
            eps /= 10.0;
            tightened = true;
        }
    }
    let certified = stop == StopReason::Certified;
    let guarantee_scope = match (certified, in_distribution) {
        (false, _) => GuaranteeScope::Uncertified,
        (true, true) => GuaranteeScope::InDistribution,
        (true, false) => GuaranteeScope::FullSpace,
    };
    Ok(PruneResult {
        support: support_size(&weights),
        weights,
        n_trees: e.n_trees(),
        iterations: records.len(),
        records,
        tau,
        alpha: None,
        calibration: None,
        certified,
        guarantee_scope,
        stop_reason: stop,
        sparsity_optimal,
        epsilon: eps,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
