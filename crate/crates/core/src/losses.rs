//! Segmentation, classification and box-regression losses as plain numeric
//! functions, each paired with its analytic gradient.
//!
//! Inputs are probabilities, not logits. Reductions are means and use
//! compensated summation so results do not depend on element order.

use thiserror::Error;

use crate::geometry::{giou, overlap_extent, Box3};
use crate::numeric::compensated_sum;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;
/// Allowed deviation of a class distribution's sum from 1.
pub const DISTRIBUTION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("need equal, non-zero lengths (got {probs} probabilities, {targets} targets)")]
    LengthMismatch { probs: usize, targets: usize },
    #[error("probability {0} is not in [0, 1]")]
    BadProbability(f64),
    #[error("target {0} is not 0 or 1")]
    BadTarget(f64),
    #[error("distribution {index} sums to {sum}")]
    BadDistribution { index: usize, sum: f64 },
    #[error("class {class} out of range for distribution {index}")]
    BadClass { index: usize, class: usize },
}

/// Predicted probabilities with binary targets of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    probs: Vec<f64>,
    targets: Vec<f64>,
}

impl ProbField {
    pub fn new(probs: Vec<f64>, targets: Vec<f64>) -> Result<Self, LossError> {
        if probs.is_empty() || probs.len() != targets.len() {
            return Err(LossError::LengthMismatch {
                probs: probs.len(),
                targets: targets.len(),
            });
        }
        if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(LossError::BadProbability(p));
        }
        if let Some(&t) = targets.iter().find(|t| **t != 0.0 && **t != 1.0) {
            return Err(LossError::BadTarget(t));
        }
        Ok(Self { probs, targets })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Slope of the clamp: 1 strictly inside the clamp range, 0 outside.
fn clamp_slope(p: f64) -> f64 {
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        1.0
    } else {
        0.0
    }
}

/// Mean binary cross-entropy `-[t ln p + (1 - t) ln(1 - p)]`.
pub fn bce(field: &ProbField) -> f64 {
    let terms = field.probs.iter().zip(&field.targets).map(|(&p, &t)| {
        let p = clamp_prob(p);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    });
    compensated_sum(terms) / field.len() as f64
}

pub fn bce_grad(field: &ProbField) -> Vec<f64> {
    let n = field.len() as f64;
    field
        .probs
        .iter()
        .zip(&field.targets)
        .map(|(&raw, &t)| {
            let p = clamp_prob(raw);
            clamp_slope(raw) * (-t / p + (1.0 - t) / (1.0 - p)) / n
        })
        .collect()
}

fn check_distributions(dists: &[Vec<f64>], classes: &[usize]) -> Result<(), LossError> {
    if dists.is_empty() || dists.len() != classes.len() {
        return Err(LossError::LengthMismatch {
            probs: dists.len(),
            targets: classes.len(),
        });
    }
    for (index, (d, &class)) in dists.iter().zip(classes).enumerate() {
        if class >= d.len() {
            return Err(LossError::BadClass { index, class });
        }
        if let Some(&p) = d.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(LossError::BadProbability(p));
        }
        let sum = compensated_sum(d.iter().copied());
        if (sum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(LossError::BadDistribution { index, sum });
        }
    }
    Ok(())
}

/// Mean categorical cross-entropy `-ln dist[class]` over elements.
pub fn cross_entropy(dists: &[Vec<f64>], classes: &[usize]) -> Result<f64, LossError> {
    check_distributions(dists, classes)?;
    Ok(cross_entropy_unchecked(dists, classes))
}

/// [`cross_entropy`] without the distribution checks, so it can be
/// evaluated off the probability simplex (e.g. by finite differences).
///
/// Panics if a class index is out of range.
pub fn cross_entropy_unchecked(dists: &[Vec<f64>], classes: &[usize]) -> f64 {
    let terms = dists
        .iter()
        .zip(classes)
        .map(|(d, &c)| -clamp_prob(d[c]).ln());
    compensated_sum(terms) / dists.len() as f64
}

/// Partial derivatives of [`cross_entropy_unchecked`] with respect to every
/// probability, shaped like `dists`.
pub fn cross_entropy_grad(dists: &[Vec<f64>], classes: &[usize]) -> Vec<Vec<f64>> {
    let n = dists.len() as f64;
    dists
        .iter()
        .zip(classes)
        .map(|(d, &c)| {
            let mut g = vec![0.0; d.len()];
            g[c] = -clamp_slope(d[c]) / (clamp_prob(d[c]) * n);
            g
        })
        .collect()
}

struct DiceSums {
    overlap: f64,
    probs: f64,
    targets: f64,
}

fn dice_sums(field: &ProbField) -> DiceSums {
    DiceSums {
        overlap: compensated_sum(field.probs.iter().zip(&field.targets).map(|(p, t)| p * t)),
        probs: compensated_sum(field.probs.iter().copied()),
        targets: compensated_sum(field.targets.iter().copied()),
    }
}

/// Soft Dice loss `1 - (2 Σpt + ε) / (Σp + Σt + ε)` with `ε = 1e-5`.
pub fn soft_dice(field: &ProbField) -> f64 {
    let s = dice_sums(field);
    1.0 - (2.0 * s.overlap + DICE_EPS) / (s.probs + s.targets + DICE_EPS)
}

pub fn soft_dice_grad(field: &ProbField) -> Vec<f64> {
    let s = dice_sums(field);
    let num = 2.0 * s.overlap + DICE_EPS;
    let den = s.probs + s.targets + DICE_EPS;
    field
        .targets
        .iter()
        .map(|&t| -(2.0 * t * den - num) / (den * den))
        .collect()
}

/// `1 - GIoU(pred, gt)`, in `[0, 2]`.
pub fn giou_loss(pred: &Box3, gt: &Box3) -> f64 {
    1.0 - giou(pred, gt)
}

/// Gradient of [`giou_loss`] with respect to the prediction's coordinates,
/// ordered `(min_x, min_y, min_z, max_x, max_y, max_z)`.
///
/// Where a min/max pair of the two boxes coincide the loss is not
/// differentiable; the prediction is then treated as not binding.
pub fn giou_loss_grad(pred: &Box3, gt: &Box3) -> [f64; 6] {
    let pe = pred.extent();
    let ge = gt.extent();
    let ov = overlap_extent(pred, gt);
    let hull = pred.enclosing(gt);
    let he = hull.extent();

    let prod_except =
        |v: &[f64; 3], k: usize| -> f64 { (0..3).filter(|&j| j != k).map(|j| v[j]).product() };
    let inter = ov[0] * ov[1] * ov[2];
    let vp = pe[0] * pe[1] * pe[2];
    let vg = ge[0] * ge[1] * ge[2];
    let union = vp + vg - inter;
    let c = he[0] * he[1] * he[2];

    let mut grad = [0.0; 6];
    for k in 0..3 {
        for (slot, is_max) in [(k, false), (k + 3, true)] {
            let sign = if is_max { 1.0 } else { -1.0 };
            let d_vp = sign * prod_except(&pe, k);
            let binds_inter = ov[k] > 0.0
                && if is_max {
                    pred.max[k] < gt.max[k]
                } else {
                    pred.min[k] > gt.min[k]
                };
            let d_inter = if binds_inter {
                sign * prod_except(&ov, k)
            } else {
                0.0
            };
            let binds_hull = if is_max {
                pred.max[k] > gt.max[k]
            } else {
                pred.min[k] < gt.min[k]
            };
            let d_c = if binds_hull {
                sign * prod_except(&he, k)
            } else {
                0.0
            };
            let d_union = d_vp - d_inter;

            let mut d_giou = 0.0;
            if union > 0.0 {
                d_giou += (d_inter * union - inter * d_union) / (union * union);
            }
            if c > 0.0 && c > union {
                d_giou += (d_union * c - union * d_c) / (c * c);
            }
            grad[slot] = -d_giou;
        }
    }
    grad
}
