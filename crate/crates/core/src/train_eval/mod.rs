//! Training, evaluation and the downstream uses of a trained reconstructor.

mod apps;
mod metrics;
mod split;
mod train;

use thiserror::Error;

use crate::grid::GridError;
use crate::masker::{MaskError, MaskedSample};
use crate::nn::{Model, NnError};
use crate::pf::PfError;
use crate::scenario::ScenarioError;

pub use apps::{
    benchmark, knowns_from_grid, neural_pf, screen_contingencies, screening_candidates,
    BenchmarkReport, BenchmarkRow, ContingencyRow,
    Engine, FlowViolation, OperatingLimits, Status, VoltageViolation, ViolationReport,
};
pub use metrics::{evaluate, EvalReport, Masking, Metrics};
pub use split::{split_samples, Split, SplitConfig, SplitKind};
pub use train::{train, Adam, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample {0} is not a converged solution")]
    NotConverged(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        last_good: Box<Model>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that fills in the masked entries of a sample.
pub trait Reconstructor {
    /// All four features at every bus in physical units.
    fn reconstruct(&self, input: &MaskedSample<'_>) -> Result<Vec<[f64; 4]>, NnError>;
}

impl Reconstructor for Model {
    fn reconstruct(&self, input: &MaskedSample<'_>) -> Result<Vec<[f64; 4]>, NnError> {
        self.forward(input)
    }
}
