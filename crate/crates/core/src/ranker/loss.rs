//! RankNet probability and cross-entropy, and the indicator-gated totals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stn::BoundsReport;

/// Logistic of the score difference, `e^{v1−v2} / (1 + e^{v1−v2})`,
/// evaluated without overflow for any finite inputs.
pub fn rank_prob(v1: f64, v2: f64) -> f64 {
    sigmoid(v1 - v2)
}

pub(crate) fn sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 0.5 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("pair label must be 0, 0.5 or 1, got {y}")))
    }
}

/// `−y·log P − (1−y)·log(1−P)`, computed from `d = v1 − v2` as
/// `y·softplus(−d) + (1−y)·softplus(d)`.
pub fn rank_loss(v1: f64, v2: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    Ok(rank_loss_unchecked(v1 - v2, y))
}

pub(crate) fn rank_loss_unchecked(d: f64, y: f64) -> f64 {
    y * softplus(-d) + (1.0 - y) * softplus(d)
}

/// `∂L_rank/∂v1` (the derivative with respect to `v2` is its negation).
pub fn rank_loss_grad(v1: f64, v2: f64, y: f64) -> f64 {
    sigmoid(v1 - v2) - y
}

/// Per-pair loss terms. Index 0 of `spatial` and `lambdas` is the left
/// branch, index 1 the right; inner vectors run over pyramid levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rank_loss: f64,
    pub spatial: [Vec<f64>; 2],
    pub lambdas: [Vec<u8>; 2],
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(rank_loss: f64, spatial: [Vec<f64>; 2], lambdas: [Vec<u8>; 2]) -> Self {
        let mut b = LossBreakdown {
            rank_loss,
            spatial,
            lambdas,
            total: 0.0,
        };
        b.total = b.recompute_total();
        b
    }

    /// `Π(1 − λ)` over every indicator of both branches.
    pub fn gate(&self) -> f64 {
        let open = self.lambdas.iter().flatten().all(|&l| l == 0);
        if open {
            1.0
        } else {
            0.0
        }
    }

    pub fn recompute_total(&self) -> f64 {
        let mut total = self.gate() * self.rank_loss;
        for branch in 0..2 {
            for (&l, &s) in self.lambdas[branch].iter().zip(&self.spatial[branch]) {
                total += f64::from(l) * s;
            }
        }
        total
    }

    pub fn levels(&self) -> usize {
        self.lambdas[0].len()
    }
}

/// Combines a rank loss with the bounds reports of both branches.
pub fn combined_loss(rank_loss: f64, left: &[BoundsReport], right: &[BoundsReport]) -> LossBreakdown {
    let spatial = [
        left.iter().map(|b| b.spatial_loss).collect(),
        right.iter().map(|b| b.spatial_loss).collect(),
    ];
    let lambdas = [
        left.iter().map(|b| b.lambda).collect(),
        right.iter().map(|b| b.lambda).collect(),
    ];
    LossBreakdown::from_parts(rank_loss, spatial, lambdas)
}
