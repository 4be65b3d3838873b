use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::scenario::Sample;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Individual samples are held out.
    #[default]
    Scenario,
    /// Whole topologies (by hash) are held out.
    Topology,
}

fn default_holdout() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default)]
    pub kind: SplitKind,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            kind: SplitKind::Scenario,
            holdout_fraction: default_holdout(),
            seed: 0,
        }
    }
}

/// Sample indices, ascending within each part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

pub fn split_samples(samples: &[Sample], cfg: &SplitConfig) -> Result<Split, TrainError> {
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(TrainError::InvalidConfig(format!(
            "holdout_fraction must lie in [0, 1), got {}",
            cfg.holdout_fraction
        )));
    }
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let target = (cfg.holdout_fraction * samples.len() as f64).round() as usize;
    let mut holdout = match cfg.kind {
        SplitKind::Scenario => {
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(target);
            idx
        }
        SplitKind::Topology => {
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                groups.entry(s.topology_hash).or_default().push(i);
            }
            if target > 0 && groups.len() < 2 {
                return Err(TrainError::InvalidConfig(
                    "topology split needs at least two distinct topologies".into(),
                ));
            }
            let mut keys: Vec<u64> = groups.keys().copied().collect();
            rng.shuffle(&mut keys);
            let mut out = Vec::new();
            // Never hold out every topology.
            for k in &keys[..keys.len() - 1] {
                if out.len() >= target {
                    break;
                }
                out.extend_from_slice(&groups[k]);
            }
            out
        }
    };
    holdout.sort_unstable();
    let mut is_held = vec![false; samples.len()];
    holdout.iter().for_each(|&i| is_held[i] = true);
    let train = (0..samples.len()).filter(|&i| !is_held[i]).collect();
    Ok(Split { train, holdout })
}
