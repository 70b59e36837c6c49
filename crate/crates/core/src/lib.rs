//! Mel'nikov 1-form evaluation for perturbed Hamiltonian systems.
//!
//! The pipeline runs `expr` (text to compiled fields) into `phase`
//! (symplectic model and catalog) and `dynamics` (flows, monodromy,
//! periodic orbits). From there `separatrix` builds connecting orbits,
//! `melnikov` integrates brackets along them, and `splitting` is the
//! brute-force manifold oracle used to validate the first-order theory.

pub mod dynamics;
pub mod expr;
pub mod melnikov;
pub mod ode;
pub mod par;
pub mod phase;
pub mod quad;
pub mod roots;
pub mod separatrix;
pub mod splitting;
pub mod verify;

use thiserror::Error;

pub use expr::{ExprError, Expression};
pub use phase::{CoordinatePair, Hamiltonian, PhasePoint, SystemDef, Topology};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("guard `{guard}` tripped: {detail}")]
    Guard { guard: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for the command-line contract:
    /// 1 configuration, 2 solver failure, 3 convergence guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Expr(ExprError::Domain(_)) | Error::Expr(ExprError::MissingBinding(_)) => 2,
            Error::Expr(_) | Error::Config(_) => 1,
            Error::Solver(_) => 2,
            Error::Guard { .. } => 3,
        }
    }

    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

/// Fixed 17-significant-digit rendering used by every exporter.
pub fn fmt17(v: f64) -> String {
    if v == 0.0 {
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}
