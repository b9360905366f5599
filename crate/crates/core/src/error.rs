use thiserror::Error;

use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("point too close to the boundary of the valid region: {0}")]
    Proximity(String),

    #[error("section leaves the valid region: {0}")]
    Containment(String),

    #[error("iteration limit reached after {} iterations (residual {:.3e})", .report.iterations, .report.residual)]
    IterationLimit { report: Box<SolveReport> },

    #[error("perturbation step rejected: {which}")]
    StepRejected { which: String },

    #[error("no admissible q_in: {0}")]
    NoAdmissibleQin(String),

    #[error("no admissible gamma: {0}")]
    NoAdmissibleGamma(String),

    #[error("divergence detected: {0}")]
    Divergence(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Precondition(_)
            | Error::Contract(_)
            | Error::Parse { .. }
            | Error::NoAdmissibleQin(_)
            | Error::NoAdmissibleGamma(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
