use std::collections::HashMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{Head, HeadGrad};
use super::optim::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::imgcore::{RawPatch, RgbImage};
use crate::numeric::compensated_sum;
use crate::objective::{batch_loss, LossTerms, LossWeights, SoftHistogramSpec};
use crate::otmatch::PairGraph;
use crate::rawproc::{preprocess, RawProcConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weights: LossWeights,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay to zero over each stage.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    /// Zero epochs skips the stage.
    pub stage2: StageConfig,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
    pub histogram: SoftHistogramSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: StageConfig {
                epochs: 10,
                lr: 1e-4,
                weights: LossWeights::STAGE1,
            },
            stage2: StageConfig {
                epochs: 5,
                lr: 1e-4,
                weights: LossWeights::STAGE2,
            },
            batch_size: 24,
            optimizer: AdamWConfig::default(),
            schedule: LrSchedule::Constant,
            histogram: SoftHistogramSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1.epochs == 0 {
            return Err(Error::Config("stage 1 needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        for (i, s) in [&self.stage1, &self.stage2].into_iter().enumerate() {
            if !(s.lr.is_finite() && s.lr >= 0.0) {
                return Err(Error::Config(format!(
                    "stage {} lr must be finite and >= 0, got {}",
                    i + 1,
                    s.lr
                )));
            }
            s.weights.validate()?;
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub stage: u8,
    /// Zero-based within the stage.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub terms: LossTerms,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub steps: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Two-stage training over pseudo-pairs.
///
/// Every epoch visits each source of `graph` once in a seeded shuffled
/// order; each source draws one target from its candidates. Per-sample
/// forward/backward runs in parallel and gradients are reduced in sample
/// order, so results are bit-identical across thread counts.
pub fn train(
    head: &mut Head,
    graph: &PairGraph,
    sources: &HashMap<String, RgbImage>,
    targets: &HashMap<String, RgbImage>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if graph.is_empty() {
        return Err(Error::Config("pair graph is empty".into()));
    }
    for e in graph.entries() {
        if !sources.contains_key(&e.source_id) {
            return Err(Error::UnknownId(e.source_id.clone()));
        }
        if let Some(c) = e.candidates.iter().find(|c| !targets.contains_key(&c.target_id)) {
            return Err(Error::UnknownId(c.target_id.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optimizer, head.param_count());
    let mut params = head.params();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..graph.len()).collect();
    let batches_per_epoch = graph.len().div_ceil(cfg.batch_size);

    for (stage_idx, stage) in [(1u8, &cfg.stage1), (2u8, &cfg.stage2)] {
        let total_steps = (stage.epochs * batches_per_epoch).max(1);
        let mut stage_step = 0usize;
        for epoch in 0..stage.epochs {
            order.shuffle(&mut rng);
            let mut batch_values = Vec::with_capacity(batches_per_epoch);
            let mut batch_terms = Vec::with_capacity(batches_per_epoch);
            for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let mut xs = Vec::with_capacity(chunk.len());
                let mut ys = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let src = &graph.entries()[i].source_id;
                    let tgt = graph.sample_target(src, &mut rng)?;
                    xs.push(&sources[src]);
                    ys.push(targets[tgt].clone());
                }
                let preds: Vec<RgbImage> = xs.par_iter().map(|x| head.forward(x)).collect();
                let loss = batch_loss(&preds, &ys, &stage.weights, &cfg.histogram)?;
                let nonfinite = |term| Error::NonFiniteLoss {
                    term,
                    epoch,
                    batch: batch_idx,
                };
                if let Some(term) = loss.terms.non_finite() {
                    return Err(nonfinite(term));
                }
                if !loss.value.is_finite() {
                    return Err(nonfinite("total"));
                }
                let grads: Vec<HeadGrad> = xs
                    .par_iter()
                    .zip(&loss.grads)
                    .map(|(x, g)| head.backward(x, g))
                    .collect::<Result<_>>()?;
                let summed: Vec<f64> = (0..params.len())
                    .map(|k| compensated_sum(grads.iter().map(|g| g.params[k])))
                    .collect();
                if summed.iter().any(|g| !g.is_finite()) {
                    return Err(nonfinite("gradient"));
                }

                let lr = match cfg.schedule {
                    LrSchedule::Constant => stage.lr,
                    LrSchedule::Cosine => {
                        stage.lr * 0.5 * (1.0 + (PI * stage_step as f64 / total_steps as f64).cos())
                    }
                };
                opt.step(&mut params, &summed, lr);
                head.set_params(&params)?;
                head.project();
                params = head.params();
                stage_step += 1;
                report.steps += 1;

                batch_values.push(loss.value * chunk.len() as f64);
                batch_terms.push((loss.terms, chunk.len() as f64));
            }
            let n = graph.len() as f64;
            let mean =
                |f: fn(&LossTerms) -> f64| compensated_sum(batch_terms.iter().map(|(t, k)| f(t) * k)) / n;
            report.epochs.push(EpochLoss {
                stage: stage_idx,
                epoch,
                mean_loss: compensated_sum(batch_values.iter().copied()) / n,
                terms: LossTerms {
                    mom: mean(|t| t.mom),
                    luma: mean(|t| t.luma),
                    chroma: mean(|t| t.chroma),
                    gram: None,
                    tv: mean(|t| t.tv),
                },
            });
        }
    }
    Ok(report)
}

/// Pre-processes each RAW patch and applies the head.
pub fn infer(head: &Head, raws: &[RawPatch], cfg: &RawProcConfig) -> Result<Vec<RgbImage>> {
    cfg.validate()?;
    raws.par_iter()
        .map(|r| preprocess(r, cfg).map(|x| head.forward(&x)))
        .collect()
}
