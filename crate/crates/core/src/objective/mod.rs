//! Statistic-matching training losses with exact gradients with respect to
//! the predicted pixels (or, for the Gram term, the predicted features).

mod gram;
mod histogram;
mod moment;
mod tv;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gram::{gram_loss, gram_matrix, GramLoss};
pub use histogram::{hist_loss_uv, hist_loss_y, soft_histogram_uv, soft_histogram_y, SoftHistogramSpec};
pub use moment::{moment_loss, moments, MomentStats};
pub use tv::tv_loss;

use crate::error::{Error, Result};
use crate::imgcore::{FeatureMapSet, RgbImage};
use crate::numeric::compensated_sum;

/// A scalar loss and its gradient, laid out like the predicted image data.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mom: f64,
    pub luma: f64,
    pub chroma: f64,
    pub gram: f64,
    pub tv: f64,
}

impl LossWeights {
    /// Weights of the first (color-matching) stage.
    pub const STAGE1: Self = Self {
        mom: 1.0,
        luma: 1.0,
        chroma: 1.5,
        gram: 1.0,
        tv: 0.05,
    };

    /// Second stage: moment and TV weights reduced.
    pub const STAGE2: Self = Self {
        mom: 0.2,
        luma: 1.0,
        chroma: 1.5,
        gram: 1.0,
        tv: 0.01,
    };

    pub const ZERO: Self = Self {
        mom: 0.0,
        luma: 0.0,
        chroma: 0.0,
        gram: 0.0,
        tv: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.mom, "mom"),
            (self.luma, "luma"),
            (self.chroma, "chroma"),
            (self.gram, "gram"),
            (self.tv, "tv"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::STAGE1
    }
}

/// Unweighted value of each term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mom: f64,
    pub luma: f64,
    pub chroma: f64,
    /// `None` when no feature maps were supplied.
    pub gram: Option<f64>,
    pub tv: f64,
}

impl LossTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.mom * self.mom
            + w.luma * self.luma
            + w.chroma * self.chroma
            + w.gram * self.gram.unwrap_or(0.0)
            + w.tv * self.tv
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            (self.mom, "mom"),
            (self.luma, "luma"),
            (self.chroma, "chroma"),
            (self.gram.unwrap_or(0.0), "gram"),
            (self.tv, "tv"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, n)| n)
    }
}

/// Pre-extracted features of the prediction and of its target.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePair<'a> {
    pub pred: &'a FeatureMapSet,
    pub target: &'a FeatureMapSet,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossTerms,
    pub grad: Vec<f64>,
    /// Gradient with respect to the predicted feature maps, when supplied.
    pub feature_grads: Option<Vec<Vec<f64>>>,
}

/// Weighted sum of all terms for one prediction/target pair.
pub fn total_loss(
    pred: &RgbImage,
    target: &RgbImage,
    weights: &LossWeights,
    hist: &SoftHistogramSpec,
    features: Option<FeaturePair<'_>>,
) -> Result<TotalLoss> {
    weights.validate()?;
    let mom = moment_loss(pred, target);
    let luma = hist_loss_y(pred, target, hist.bins_y);
    let chroma = hist_loss_uv(pred, target, hist.bins_uv);
    let tv = tv_loss(pred);
    let gram = features.map(|f| gram_loss(f.pred, f.target)).transpose()?;

    let terms = LossTerms {
        mom: mom.value,
        luma: luma.value,
        chroma: chroma.value,
        gram: gram.as_ref().map(|g| g.value),
        tv: tv.value,
    };
    let grad = (0..mom.grad.len())
        .map(|i| {
            weights.mom * mom.grad[i]
                + weights.luma * luma.grad[i]
                + weights.chroma * chroma.grad[i]
                + weights.tv * tv.grad[i]
        })
        .collect();
    let feature_grads = gram.map(|g| {
        g.grads
            .into_iter()
            .map(|v| v.into_iter().map(|x| x * weights.gram).collect())
            .collect()
    });
    Ok(TotalLoss {
        value: terms.weighted(weights),
        terms,
        grad,
        feature_grads,
    })
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub value: f64,
    /// Batch-mean of each term.
    pub terms: LossTerms,
    /// Per-sample pixel gradients of the batch-mean loss.
    pub grads: Vec<Vec<f64>>,
}

/// Batch-mean of [`total_loss`] over aligned prediction/target lists.
/// Samples are evaluated in parallel and reduced in index order.
pub fn batch_loss(
    preds: &[RgbImage],
    targets: &[RgbImage],
    weights: &LossWeights,
    hist: &SoftHistogramSpec,
) -> Result<BatchLoss> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "batch of {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let per: Vec<TotalLoss> = preds
        .par_iter()
        .zip(targets)
        .map(|(p, t)| total_loss(p, t, weights, hist, None))
        .collect::<Result<_>>()?;
    let inv_b = 1.0 / per.len() as f64;
    let mean = |f: fn(&LossTerms) -> f64| compensated_sum(per.iter().map(|l| f(&l.terms))) * inv_b;
    let terms = LossTerms {
        mom: mean(|t| t.mom),
        luma: mean(|t| t.luma),
        chroma: mean(|t| t.chroma),
        gram: None,
        tv: mean(|t| t.tv),
    };
    Ok(BatchLoss {
        value: terms.weighted(weights),
        terms,
        grads: per
            .into_iter()
            .map(|l| l.grad.into_iter().map(|g| g * inv_b).collect())
            .collect(),
    })
}
