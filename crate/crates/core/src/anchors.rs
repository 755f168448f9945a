//! Detection-head geometry: multi-level anchor grids, anchor to ground-truth
//! assignment, and the (center offset, log scale) box regression coding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, Box3};

#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("invalid anchor config: {0}")]
    InvalidConfig(String),
    #[error("ground-truth box has zero extent on axis {0}")]
    DegenerateGt(usize),
    #[error("anchor box has zero extent on axis {0}")]
    DegenerateAnchor(usize),
    #[error("decoded box is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Patch extent in voxels (x, y, z).
    pub patch_dims: [usize; 3],
    /// Feature stride of each pyramid level, in voxels per cell.
    pub strides: Vec<usize>,
    /// Anchor edge lengths (x, y, z) per level.
    pub sizes_per_level: Vec<Vec<[f64; 3]>>,
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        let strides = vec![4, 8, 16];
        let sizes_per_level = strides.iter().map(|&s| default_sizes(s)).collect();
        Self {
            patch_dims: [256, 224, 56],
            strides,
            sizes_per_level,
            pos_iou: 0.5,
            neg_iou: 0.4,
        }
    }
}

/// `(2s, 2s, 2s)`, `(3s, 3s, 3s)` and `(4s, 4s, 2s)` for stride `s`.
pub fn default_sizes(stride: usize) -> Vec<[f64; 3]> {
    let s = stride as f64;
    vec![[2.0 * s; 3], [3.0 * s; 3], [4.0 * s, 4.0 * s, 2.0 * s]]
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<(), AnchorError> {
        let bad = |msg: String| Err(AnchorError::InvalidConfig(msg));
        if self.patch_dims.contains(&0) {
            return bad(format!("patch dims {:?}", self.patch_dims));
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad(format!("strides {:?}", self.strides));
        }
        if self.sizes_per_level.len() != self.strides.len() {
            return bad(format!(
                "{} size lists for {} levels",
                self.sizes_per_level.len(),
                self.strides.len()
            ));
        }
        for sizes in &self.sizes_per_level {
            if sizes.is_empty() || sizes.iter().flatten().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("anchor sizes {sizes:?}"));
            }
        }
        if !(0.0 <= self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou <= 1.0) {
            return bad(format!(
                "need 0 <= neg_iou ({}) <= pos_iou ({}) <= 1",
                self.neg_iou, self.pos_iou
            ));
        }
        Ok(())
    }

    /// Cells per axis on a level: `ceil(patch / stride)`.
    pub fn grid_dims(&self, level: usize) -> [usize; 3] {
        let s = self.strides[level];
        self.patch_dims.map(|d| d.div_ceil(s))
    }

    /// Closed-form anchor count.
    pub fn anchor_count(&self) -> usize {
        (0..self.strides.len())
            .map(|l| self.grid_dims(l).iter().product::<usize>() * self.sizes_per_level[l].len())
            .sum()
    }
}

/// Tile anchors over the patch. Order: level, then z, y, x cell, then size.
pub fn generate_anchors(cfg: &AnchorConfig) -> Result<Vec<Box3>, AnchorError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.anchor_count());
    for (level, &stride) in cfg.strides.iter().enumerate() {
        let s = stride as f64;
        let [gx, gy, gz] = cfg.grid_dims(level);
        for z in 0..gz {
            for y in 0..gy {
                for x in 0..gx {
                    let center = [x, y, z].map(|k| (k as f64 + 0.5) * s);
                    for size in &cfg.sizes_per_level[level] {
                        out.push(
                            Box3::from_center_extent(center, *size)
                                .expect("positive sizes give valid boxes"),
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorAssignment {
    pub labels: Vec<AnchorLabel>,
    /// Anchor forced positive for each ground-truth box; `None` only when
    /// there are fewer anchors than boxes.
    pub forced: Vec<Option<usize>>,
}

impl AnchorAssignment {
    pub fn positives_for(&self, gt: usize) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == AnchorLabel::Positive(gt))
            .count()
    }

    /// Positive anchors that were not forced.
    pub fn threshold_positive_count(&self) -> usize {
        let forced: std::collections::HashSet<usize> =
            self.forced.iter().flatten().copied().collect();
        self.labels
            .iter()
            .enumerate()
            .filter(|(i, l)| matches!(l, AnchorLabel::Positive(_)) && !forced.contains(i))
            .count()
    }
}

/// Fixed-threshold assignment with per-gt forcing.
///
/// An anchor whose best IoU is at least `pos_iou` is positive for its best
/// box (ties to the lowest box index); below `neg_iou` it is negative;
/// otherwise ignored. Then every box claims its highest-IoU anchor (ties to
/// the lowest anchor index) as a positive, skipping anchors an earlier box
/// already claimed so that each box keeps at least one positive.
pub fn assign_anchors(anchors: &[Box3], gts: &[Box3], cfg: &AnchorConfig) -> AnchorAssignment {
    let mut labels = Vec::with_capacity(anchors.len());
    // ious[g][a]
    let ious: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| anchors.iter().map(|a| iou(a, g)).collect())
        .collect();

    for a in 0..anchors.len() {
        let mut best: Option<(usize, f64)> = None;
        for (g, row) in ious.iter().enumerate() {
            if best.is_none_or(|(_, v)| row[a] > v) {
                best = Some((g, row[a]));
            }
        }
        labels.push(match best {
            Some((g, v)) if v >= cfg.pos_iou => AnchorLabel::Positive(g),
            Some((_, v)) if v >= cfg.neg_iou => AnchorLabel::Ignore,
            _ => AnchorLabel::Negative,
        });
    }

    let mut claimed = vec![false; anchors.len()];
    let mut forced = Vec::with_capacity(gts.len());
    for (g, row) in ious.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (a, &v) in row.iter().enumerate() {
            if !claimed[a] && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((a, v));
            }
        }
        if let Some((a, _)) = best {
            claimed[a] = true;
            labels[a] = AnchorLabel::Positive(g);
        }
        forced.push(best.map(|(a, _)| a));
    }

    AnchorAssignment { labels, forced }
}

/// Regression target `(dx, dy, dz, lx, ly, lz)`: center offset in units of
/// the anchor extent, and log ratio of extents.
pub fn encode_box(anchor: &Box3, gt: &Box3) -> Result<[f64; 6], AnchorError> {
    let (ac, ae) = (anchor.center(), anchor.extent());
    let (gc, ge) = (gt.center(), gt.extent());
    if let Some(axis) = ae.iter().position(|&e| e <= 0.0) {
        return Err(AnchorError::DegenerateAnchor(axis));
    }
    if let Some(axis) = ge.iter().position(|&e| e <= 0.0) {
        return Err(AnchorError::DegenerateGt(axis));
    }
    let mut t = [0.0; 6];
    for i in 0..3 {
        t[i] = (gc[i] - ac[i]) / ae[i];
        t[3 + i] = (ge[i] / ae[i]).ln();
    }
    Ok(t)
}

/// Inverse of [`encode_box`].
pub fn decode_box(anchor: &Box3, target: &[f64; 6]) -> Result<Box3, AnchorError> {
    let (ac, ae) = (anchor.center(), anchor.extent());
    if let Some(axis) = ae.iter().position(|&e| e <= 0.0) {
        return Err(AnchorError::DegenerateAnchor(axis));
    }
    let center = [0, 1, 2].map(|i| ac[i] + target[i] * ae[i]);
    let extent = [0, 1, 2].map(|i| ae[i] * target[3 + i].exp());
    Box3::from_center_extent(center, extent).map_err(|_| AnchorError::NonFinite)
}
