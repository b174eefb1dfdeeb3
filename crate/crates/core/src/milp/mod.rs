//! Mixed binary/continuous linear programs, an exact branch-and-bound solver
//! and LP-file import/export.
//!
//! LP relaxations are solved by the `microlp` simplex; branching, bounding,
//! incumbent handling and certificate checks live here.

mod lp_format;
mod model;
mod solve;

pub use lp_format::{export_lp, parse_lp};
pub use model::{Constraint, MilpModel, Objective, Relation, Sense, VarId, VarKind, Variable};
pub use solve::{solve, solve_with_start, Limits, MilpSolution, SolveOptions, Status, Tolerances};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("objective is unbounded")]
    Unbounded,
    #[error("LP relaxation failed: {0}")]
    Lp(String),
    #[error("LP parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}
