//! Standard power flow: Newton-Raphson on the bus-injection form, plus the
//! linearised DC approximation.

mod dc;
pub mod linalg;
mod newton;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, NodeState};

pub use dc::solve_dc;
pub use newton::{jacobian, solve_ac, AdmittanceRows};

/// Above this bus count the Newton step uses the sparse factorisation.
pub const SPARSE_THRESHOLD: usize = 200;

/// Step factor used when a full-step solve fails and is retried.
pub const DAMPING: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PfError {
    #[error("grid must have exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("singular DC susceptance matrix (islanded grid?)")]
    SingularSystem,
    #[error("branch {0} has zero reactance")]
    ZeroReactance(usize),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Start {
    #[default]
    Flat,
    Warm(Vec<NodeState>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub start: Start,
    /// Retry once with damped steps when the full-step solve fails.
    pub damped_retry: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            start: Start::Flat,
            damped_retry: true,
        }
    }
}

impl PfOptions {
    pub fn validate(&self) -> Result<(), PfError> {
        if !(self.tol > 0.0) {
            return Err(PfError::InvalidOptions(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(PfError::InvalidOptions("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub state: Vec<NodeState>,
    pub converged: bool,
    /// Newton corrections applied in the reported attempt.
    pub iterations: usize,
    /// Nodal-balance infinity norm of `state`, recomputed from the branch
    /// kernels after the iteration finished.
    pub residual_inf_norm: f64,
    /// True if the full-step attempt failed and this is the damped retry.
    pub damped: bool,
    /// Residual before each correction, plus the final one.
    pub residual_history: Vec<f64>,
}
