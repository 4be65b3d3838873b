//! Scenario generation: load and topology perturbations, N-k contingency
//! enumeration and JSONL dataset shards.

mod contingency;
mod dataset;
mod perturb;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::CaseError;

pub use contingency::{binomial, enumerate_contingencies, Combinations, ContingencySpec};
pub use dataset::{
    generate_dataset, read_dataset, topology_hash, write_dataset, CaseReport, Dataset,
    GenerateConfig, GenerationReport, Sample, ShardHeader, SCHEMA_VERSION,
};
pub use perturb::{
    candidates, perturb_load, perturb_topology, LoadScale, PerturbConfig, RejectReason, Topology,
    TopologyDrop,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid element reference {0:?}")]
    InvalidRef(ElementRef),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no scenario converged; nothing written")]
    EmptyOutput,
    #[error("malformed shard {file}:{line}: {reason}")]
    MalformedShard {
        file: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Branch,
    Generator,
}

/// A droppable grid element. For generators `index` is the bus index, since
/// co-located units are merged into one injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(ElementKind, usize)", into = "(ElementKind, usize)")]
pub struct ElementRef {
    pub kind: ElementKind,
    pub index: usize,
}

impl ElementRef {
    pub fn branch(index: usize) -> Self {
        Self {
            kind: ElementKind::Branch,
            index,
        }
    }

    pub fn generator(bus: usize) -> Self {
        Self {
            kind: ElementKind::Generator,
            index: bus,
        }
    }
}

impl From<(ElementKind, usize)> for ElementRef {
    fn from((kind, index): (ElementKind, usize)) -> Self {
        Self { kind, index }
    }
}

impl From<ElementRef> for (ElementKind, usize) {
    fn from(e: ElementRef) -> Self {
        (e.kind, e.index)
    }
}

// Stream tags for derived random streams.
pub(crate) const STREAM_LOAD: u64 = 1;
pub(crate) const STREAM_TOPOLOGY: u64 = 2;
