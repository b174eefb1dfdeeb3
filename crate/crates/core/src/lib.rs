//! Pruning of tree ensembles with certified prediction equivalence, either on
//! the whole input space or on a conformally calibrated in-distribution
//! region.

pub mod conformal;
pub mod dataio;
pub mod ensemble;
pub mod eval;
pub mod milp;
pub mod oracle;
pub mod pine;
pub mod plausibility;
pub mod pruner;
pub mod synth;
pub mod verify;

use thiserror::Error;

/// Any error raised by the library, tagged by module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataio: {0}")]
    Data(#[from] dataio::DataError),
    #[error("ensemble: {0}")]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error("milp: {0}")]
    Milp(#[from] milp::MilpError),
    #[error("plausibility: {0}")]
    Plausibility(#[from] plausibility::PlausibilityError),
    #[error("conformal: {0}")]
    Conformal(#[from] conformal::ConformalError),
    #[error("pruner: {0}")]
    Pruner(#[from] pruner::PrunerError),
    #[error("oracle: {0}")]
    Oracle(#[from] oracle::OracleError),
    #[error("pine: {0}")]
    Pine(#[from] pine::PineError),
    #[error("verify: {0}")]
    Verify(#[from] verify::VerifyError),
    #[error("eval: {0}")]
    Eval(#[from] eval::EvalError),
    #[error("synth: {0}")]
    Synth(#[from] synth::SynthError),
}
