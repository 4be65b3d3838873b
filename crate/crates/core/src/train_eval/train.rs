use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::masker::MaskedSample;
use crate::nn::{save_checkpoint, Gradients, LossBreakdown, Model, ModelConfig, NormStats, Params};
use crate::rng::{derive, unit_f64, SplitMix64};
use crate::scenario::Sample;

use super::metrics::{evaluate, Masking, Metrics};
use super::split::{split_samples, Split, SplitConfig};
use super::TrainError;

const STREAM_ORDER: u64 = 10;
const STREAM_BATCH_MASK: u64 = 11;
const STREAM_SAMPLE_MASK: u64 = 12;
const HOLDOUT_MASK_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Step size at epoch `e` is `base_lr * lr_decay^e`.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Share of batches masked with the power-flow pattern.
    pub pf_mask_fraction: f64,
    pub seed: u64,
    pub split: SplitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            base_lr: 2e-3,
            lr_decay: 0.96,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            alpha: 0.3,
            pf_mask_fraction: 0.25,
            seed: 0,
            split: SplitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) || !(self.lr_decay > 0.0) {
            return bad("base_lr must be >= 0 and lr_decay > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.pf_mask_fraction) {
            return bad("alpha and pf_mask_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Params,
    v: Params,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Params, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.tensors.iter_mut().zip(self.v.tensors.iter_mut()))
        {
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m.data[j] / c1;
                let vh = v.data[j] / c2;
                p.data[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss during the epoch.
    pub train_loss: LossBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub split: Split,
}

/// Train on the training part of `samples`.
///
/// `warm_start` continues from an existing model (its normalisation is kept);
/// otherwise a fresh model is initialised from `model_cfg`. With
/// `checkpoint_dir`, `epoch-NNN.json` is written after every epoch.
pub fn train(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    warm_start: Option<Model>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(i) = samples.iter().position(|s| !s.converged) {
        return Err(TrainError::NotConverged(i));
    }
    let split = split_samples(samples, &cfg.split)?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = match warm_start {
        Some(m) => m,
        None => {
            let train_set: Vec<Sample> = split.train.iter().map(|&i| samples[i].clone()).collect();
            Model::new(model_cfg.clone(), NormStats::from_samples(&train_set))?
        }
    };
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut adam = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.base_lr * cfg.lr_decay.powi(epoch as i32);
        let mut order = split.train.clone();
        SplitMix64::from_stream(cfg.seed, &[STREAM_ORDER, epoch as u64]).shuffle(&mut order);
        let mut acc = LossBreakdown::default();
        let mut n_batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pf_batch = unit_f64(derive(cfg.seed, &[STREAM_BATCH_MASK, epoch as u64, b as u64])) < cfg.pf_mask_fraction;
            let masking = if pf_batch {
                Masking::Pf
            } else {
                Masking::Random { alpha: cfg.alpha }
            };
            let mask_seed = derive(cfg.seed, &[STREAM_SAMPLE_MASK, epoch as u64]);
            let batch: Vec<MaskedSample<'_>> = chunk
                .iter()
                .map(|&i| masking.apply(&samples[i], mask_seed, i))
                .collect::<Result<_, _>>()?;
            let (loss, grads) = match model.backward(&batch) {
                Ok(r) => r,
                Err(crate::nn::NnError::NonFinite(_)) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        last_good: Box::new(model),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            if !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    last_good: Box::new(model),
                });
            }
            let before = model.params.clone();
            adam.step(&mut model.params, &grads, lr);
            if !model.params.all_finite() {
                model.params = before;
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    last_good: Box::new(model),
                });
            }
            acc.sce += loss.sce;
            acc.pf += loss.pf;
            acc.total += loss.total;
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let train_loss = LossBreakdown {
            sce: acc.sce / nb,
            pf: acc.pf / nb,
            total: acc.total / nb,
        };
        let holdout = if split.holdout.is_empty() {
            None
        } else {
            Some(evaluate(
                &model,
                samples,
                &split.holdout,
                Masking::Random { alpha: cfg.alpha },
                HOLDOUT_MASK_SEED,
            )?)
        };
        info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.5} (sce {:.5}, pf {:.5}){}",
            train_loss.total,
            train_loss.sce,
            train_loss.pf,
            holdout
                .as_ref()
                .map(|h| format!(", holdout mse {:.5} vs baseline {:.5}, residual {:.4}", h.masked_mse, h.baseline_mse, h.pf_residual))
                .unwrap_or_default()
        );
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&model, Some(epoch), &dir.join(format!("epoch-{epoch:03}.json")))?;
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            holdout,
        });
    }
    Ok(TrainOutcome { model, history, split })
}
