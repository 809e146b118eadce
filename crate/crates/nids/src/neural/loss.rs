//! The focal-loss family. With gamma=0, alpha=0.5, recall_boost=1 and
//! penalty_factor=0 it reduces to (half) binary cross-entropy; the detector
//! configs enable the stronger variants.

use serde::{Deserialize, Serialize};

/// Probability clamp applied before any logarithm.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    /// Positive-class weight in (0, 1]; the negative class gets 1 - alpha.
    pub alpha: f64,
    /// Focusing exponent, >= 0.
    pub gamma: f64,
    /// Multiplier on the loss of positives predicted below 0.5.
    pub recall_boost: f64,
    /// Additive (1 - p) penalty for positives predicted below 0.5.
    pub penalty_factor: f64,
}

impl FocalLossParams {
    /// Plain focal loss.
    pub fn focal(alpha: f64, gamma: f64) -> Self {
        FocalLossParams {
            alpha,
            gamma,
            recall_boost: 1.0,
            penalty_factor: 0.0,
        }
    }

    /// Binary cross-entropy scaled by alpha = 0.5.
    pub fn cross_entropy() -> Self {
        FocalLossParams {
            alpha: 0.5,
            gamma: 0.0,
            recall_boost: 1.0,
            penalty_factor: 0.0,
        }
    }

    pub fn with_recall_boost(mut self, boost: f64) -> Self {
        self.recall_boost = boost;
        self
    }

    pub fn with_penalty_factor(mut self, penalty: f64) -> Self {
        self.penalty_factor = penalty;
        self
    }
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams::focal(0.25, 2.0)
    }
}

/// Loss for one (probability, label) pair.
pub fn focal_loss(p: f64, y: u8, fp: &FocalLossParams) -> f64 {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    let (pt, at) = if y == 1 {
        (p, fp.alpha)
    } else {
        (1.0 - p, 1.0 - fp.alpha)
    };
    let base = -at * (1.0 - pt).powf(fp.gamma) * pt.ln();
    if y == 1 && p < 0.5 {
        fp.recall_boost * base + fp.penalty_factor * (1.0 - p)
    } else {
        base
    }
}

/// dLoss/dp for one pair (derivative through the clamp is zero outside it).
pub fn focal_loss_grad(p_raw: f64, y: u8, fp: &FocalLossParams) -> f64 {
    if p_raw <= PROB_EPSILON || p_raw >= 1.0 - PROB_EPSILON {
        return 0.0;
    }
    let p = p_raw;
    let (pt, at, dpt_dp) = if y == 1 {
        (p, fp.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - fp.alpha, -1.0)
    };
    // d/dpt [ -at (1-pt)^g ln(pt) ]
    let one_m = 1.0 - pt;
    let dbase_dpt = if fp.gamma == 0.0 {
        -at / pt
    } else {
        -at * (-fp.gamma * one_m.powf(fp.gamma - 1.0) * pt.ln() + one_m.powf(fp.gamma) / pt)
    };
    let mut grad = dbase_dpt * dpt_dp;
    if y == 1 && p < 0.5 {
        grad = fp.recall_boost * grad - fp.penalty_factor;
    }
    grad
}

/// Mean loss over a batch, with optional per-sample weights.
pub fn batch_loss(probs: &[f64], labels: &[u8], weights: Option<&[f64]>, fp: &FocalLossParams) -> f64 {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&p, &y))| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * focal_loss(p, y, fp)
        })
        .sum::<f64>()
        / n
}

/// dMeanLoss/dp per sample.
pub fn batch_loss_grad(
    probs: &[f64],
    labels: &[u8],
    weights: Option<&[f64]>,
    fp: &FocalLossParams,
) -> Vec<f64> {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&p, &y))| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * focal_loss_grad(p, y, fp) / n
        })
        .collect()
}
