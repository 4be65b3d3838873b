use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::mismatch_inf_norm;
use crate::masker::{mask_pf, mask_random, merge, MaskedSample};
use crate::nn::Model;
use crate::rng::derive;
use crate::scenario::Sample;

use super::{SplitConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    Random { alpha: f64 },
    Pf,
}

impl Masking {
    /// Mask for sample `index`; random masks are seeded by `(seed, index)`.
    pub fn apply<'a>(&self, sample: &'a Sample, seed: u64, index: usize) -> Result<MaskedSample<'a>, TrainError> {
        Ok(match *self {
            Masking::Random { alpha } => mask_random(sample, alpha, derive(seed, &[index as u64]))?,
            Masking::Pf => mask_pf(sample)?,
        })
    }
}

impl FromStr for Masking {
    type Err = String;

    /// `pf` or `random:ALPHA`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "pf" {
            return Ok(Masking::Pf);
        }
        let alpha = s
            .strip_prefix("random:")
            .ok_or_else(|| format!("expected `pf` or `random:ALPHA`, got `{s}`"))?;
        let alpha: f64 = alpha.parse().map_err(|_| format!("bad alpha `{alpha}`"))?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(format!("alpha must lie in [0, 1], got {alpha}"));
        }
        Ok(Masking::Random { alpha })
    }
}

impl fmt::Display for Masking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Masking::Random { alpha } => write!(f, "random:{alpha}"),
            Masking::Pf => write!(f, "pf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub n_samples: usize,
    pub n_masked: usize,
    /// Masked-entry MSE per feature `(p, q, v, delta)`, p.u. and rad.
    pub feature_mse: [f64; 4],
    /// MSE over all masked entries.
    pub masked_mse: f64,
    /// MSE of predicting the training mean of each feature.
    pub baseline_mse: f64,
    /// Mean over samples of the mismatch infinity norm of the merged state.
    pub pf_residual: f64,
    pub sce: f64,
    pub pf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub masking: Masking,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Metrics>,
    pub holdout: Metrics,
    /// `holdout.masked_mse - train.masked_mse`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overfitting_gap: Option<f64>,
}

/// Metrics of `model` over `samples[indices]`.
pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    indices: &[usize],
    masking: Masking,
    seed: u64,
) -> Result<Metrics, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mean = model.norm.node_mean;
    let mut sq = [0.0; 4];
    let mut counts = [0usize; 4];
    let mut base_sq = 0.0;
    let mut m = Metrics {
        n_samples: indices.len(),
        ..Default::default()
    };
    for &i in indices {
        let s = &samples[i];
        let input = masking.apply(s, seed, i)?;
        let (pred, loss) = model.forward_with_loss(&input)?;
        for ((truth, bits), p) in s.state.iter().zip(&input.mask.bits).zip(&pred) {
            let t = truth.to_array();
            for f in 0..4 {
                if bits[f] {
                    sq[f] += (p[f] - t[f]).powi(2);
                    base_sq += (mean[f] - t[f]).powi(2);
                    counts[f] += 1;
                }
            }
        }
        let merged = merge(&input, &pred)?;
        m.pf_residual += mismatch_inf_norm(&s.grid(), &merged)?;
        m.sce += loss.sce;
        m.pf += loss.pf;
    }
    let n = indices.len() as f64;
    m.n_masked = counts.iter().sum();
    m.feature_mse = std::array::from_fn(|f| if counts[f] > 0 { sq[f] / counts[f] as f64 } else { 0.0 });
    if m.n_masked > 0 {
        m.masked_mse = sq.iter().sum::<f64>() / m.n_masked as f64;
        m.baseline_mse = base_sq / m.n_masked as f64;
    }
    m.pf_residual /= n;
    m.sce /= n;
    m.pf /= n;
    Ok(m)
}
