//! Node-feature masks.
//!
//! A mask has one bit per bus and feature, in `(p, q, v, delta)` order;
//! `true` hides the entry from the model. No sentinel value is written into
//! the data: the encoder substitutes its learnable mask token at embedding
//! time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusType, NodeState};
use crate::rng;
use crate::scenario::Sample;

pub const P: usize = 0;
pub const Q: usize = 1;
pub const V: usize = 2;
pub const DELTA: usize = 3;

const STREAM_MASK: u64 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("masking probability must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("sample has {0} slack buses, exactly one is required")]
    NoSlack(usize),
    #[error("shape mismatch: expected {expected} rows, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub bits: Vec<[bool; 4]>,
}

impl Mask {
    pub fn empty(n: usize) -> Self {
        Self {
            bits: vec![[false; 4]; n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            bits: vec![[true; 4]; n],
        }
    }

    pub fn n_buses(&self) -> usize {
        self.bits.len()
    }

    pub fn count_masked(&self) -> usize {
        self.bits.iter().flatten().filter(|&&b| b).count()
    }

    pub fn count_unmasked(&self) -> usize {
        4 * self.bits.len() - self.count_masked()
    }

    /// Flat indices `4 * bus + feature` of masked entries, ascending.
    pub fn masked_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .flatten()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn node_has_masked(&self, i: usize) -> bool {
        self.bits[i].iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placeholder {
    /// The model's learnable mask token stands in for hidden entries.
    MaskToken,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample<'a> {
    pub sample: &'a Sample,
    pub mask: Mask,
    pub placeholder: Placeholder,
}

impl<'a> MaskedSample<'a> {
    pub fn new(sample: &'a Sample, mask: Mask) -> Result<Self, MaskError> {
        if mask.n_buses() != sample.n_buses() {
            return Err(MaskError::ShapeMismatch {
                expected: sample.n_buses(),
                got: mask.n_buses(),
            });
        }
        Ok(Self {
            sample,
            mask,
            placeholder: Placeholder::MaskToken,
        })
    }

    /// Visible entries (masked ones as `None`).
    pub fn visible(&self) -> Vec<[Option<f64>; 4]> {
        self.sample
            .state
            .iter()
            .zip(&self.mask.bits)
            .map(|(s, m)| {
                let a = s.to_array();
                std::array::from_fn(|f| (!m[f]).then_some(a[f]))
            })
            .collect()
    }
}

/// Whether entry `index` (flat `4 * bus + feature`) is masked for `seed`.
///
/// The decision is a pure function of `(seed, index)`, which makes masks
/// reproducible in any implementation of the SplitMix64 finaliser.
pub fn entry_masked(seed: u64, index: u64, alpha: f64) -> bool {
    rng::unit_f64(rng::derive(seed, &[STREAM_MASK, index])) < alpha
}

fn random_mask(n: usize, alpha: f64, seed: u64) -> Result<Mask, MaskError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MaskError::BadAlpha(alpha));
    }
    Ok(Mask {
        bits: (0..n)
            .map(|i| std::array::from_fn(|f| entry_masked(seed, (4 * i + f) as u64, alpha)))
            .collect(),
    })
}

/// Mask each of the `4|N|` entries independently with probability `alpha`,
/// regardless of bus type.
pub fn mask_random(sample: &Sample, alpha: f64, seed: u64) -> Result<MaskedSample<'_>, MaskError> {
    let mask = random_mask(sample.n_buses(), alpha, seed)?;
    MaskedSample::new(sample, mask)
}

/// The power-flow pattern for a list of bus types: generators expose (p, v),
/// loads (p, q), the slack (v, delta); everything else is hidden.
pub fn pf_mask(bus_types: &[BusType]) -> Result<Mask, MaskError> {
    let slacks = bus_types.iter().filter(|&&t| t == BusType::Slack).count();
    if slacks != 1 {
        return Err(MaskError::NoSlack(slacks));
    }
    Ok(Mask {
        bits: bus_types
            .iter()
            .map(|t| match t {
                BusType::Generator => [false, true, false, true],
                BusType::Load => [false, false, true, true],
                BusType::Slack => [true, true, false, false],
            })
            .collect(),
    })
}

/// Mask everything except the standard power-flow knowns.
pub fn mask_pf(sample: &Sample) -> Result<MaskedSample<'_>, MaskError> {
    MaskedSample::new(sample, pf_mask(&sample.bus_types)?)
}

/// Unmasked entries from the source sample, masked entries from `prediction`.
pub fn merge(masked: &MaskedSample<'_>, prediction: &[[f64; 4]]) -> Result<Vec<NodeState>, MaskError> {
    let n = masked.sample.n_buses();
    if prediction.len() != n {
        return Err(MaskError::ShapeMismatch {
            expected: n,
            got: prediction.len(),
        });
    }
    Ok(masked
        .sample
        .state
        .iter()
        .zip(&masked.mask.bits)
        .zip(prediction)
        .map(|((s, m), pred)| {
            let truth = s.to_array();
            NodeState::from_array(std::array::from_fn(|f| if m[f] { pred[f] } else { truth[f] }))
        })
        .collect())
}

/// Cross-implementation test vector for [`mask_random`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskTestVector {
    pub seed: u64,
    pub alpha: f64,
    pub n: usize,
    pub masked_indices: Vec<usize>,
}

pub fn mask_test_vector(seed: u64, alpha: f64, n: usize) -> Result<MaskTestVector, MaskError> {
    Ok(MaskTestVector {
        seed,
        alpha,
        n,
        masked_indices: random_mask(n, alpha, seed)?.masked_indices(),
    })
}

/// Check a vector against this implementation.
pub fn verify_test_vector(v: &MaskTestVector) -> Result<bool, MaskError> {
    Ok(random_mask(v.n, v.alpha, v.seed)?.masked_indices() == v.masked_indices)
}
