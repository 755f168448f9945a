//! Axis-aligned 3-D box algebra: volume, IoU, GIoU and greedy NMS.
//!
//! Boxes live in continuous voxel coordinates. All functions are total:
//! degenerate (zero-volume) boxes give an IoU of 0 rather than NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box bounds must be finite with max >= min on every axis: min {min:?}, max {max:?}")]
    InvalidBox { min: [f64; 3], max: [f64; 3] },
    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Deserialize)]
struct RawBox {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<RawBox> for Box3 {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        Box3::new(raw.min, raw.max)
    }
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, GeometryError> {
        let ok = (0..3).all(|i| min[i].is_finite() && max[i].is_finite() && max[i] >= min[i]);
        if ok {
            Ok(Self { min, max })
        } else {
            Err(GeometryError::InvalidBox { min, max })
        }
    }

    /// Box of a single voxel, `[(i, j, k), (i + 1, j + 1, k + 1)]`.
    pub fn from_voxel(v: [usize; 3]) -> Self {
        let min = v.map(|c| c as f64);
        Self {
            min,
            max: min.map(|c| c + 1.0),
        }
    }

    /// Box with the given center and per-axis edge lengths.
    pub fn from_center_extent(center: [f64; 3], extent: [f64; 3]) -> Result<Self, GeometryError> {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for i in 0..3 {
            min[i] = center[i] - 0.5 * extent[i];
            max[i] = center[i] + 0.5 * extent[i];
        }
        Self::new(min, max)
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.max[i] - self.min[i])
    }

    pub fn volume(&self) -> f64 {
        volume(self)
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &Box3) -> Box3 {
        Box3 {
            min: [0, 1, 2].map(|i| self.min[i].min(other.min[i])),
            max: [0, 1, 2].map(|i| self.max[i].max(other.max[i])),
        }
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn translated(&self, d: [f64; 3]) -> Box3 {
        Box3 {
            min: [0, 1, 2].map(|i| self.min[i] + d[i]),
            max: [0, 1, 2].map(|i| self.max[i] + d[i]),
        }
    }

    pub fn scaled(&self, factor: f64) -> Box3 {
        Box3 {
            min: self.min.map(|c| c * factor),
            max: self.max.map(|c| c * factor),
        }
    }
}

pub fn volume(b: &Box3) -> f64 {
    (b.max[0] - b.min[0]) * (b.max[1] - b.min[1]) * (b.max[2] - b.min[2])
}

/// Per-axis overlap lengths, clamped at zero.
pub(crate) fn overlap_extent(a: &Box3, b: &Box3) -> [f64; 3] {
    [0, 1, 2].map(|i| (a.max[i].min(b.max[i]) - a.min[i].max(b.min[i])).max(0.0))
}

pub fn intersection_volume(a: &Box3, b: &Box3) -> f64 {
    let o = overlap_extent(a, b);
    o[0] * o[1] * o[2]
}

pub fn iou(a: &Box3, b: &Box3) -> f64 {
    let inter = intersection_volume(a, b);
    let union = volume(a) + volume(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - (|C| - |A ∪ B|) / |C|` with `C` the enclosing box.
///
/// Falls back to plain IoU when the enclosing box has zero volume. The
/// penalty term is clamped at zero so rounding can never push the result
/// above the IoU.
pub fn giou(a: &Box3, b: &Box3) -> f64 {
    let inter = intersection_volume(a, b);
    let union = volume(a) + volume(b) - inter;
    let hull = volume(&a.enclosing(b));
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    if hull <= 0.0 {
        return iou;
    }
    iou - ((hull - union) / hull).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: Box3, score: f64) -> Result<Self, GeometryError> {
        if (0.0..=1.0).contains(&score) {
            Ok(Self { bbox, score })
        } else {
            Err(GeometryError::InvalidScore(score))
        }
    }
}

/// Indices of `dets` ordered by descending score; equal scores keep input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy non-maximum suppression. Returns the indices of kept detections in
/// descending score order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for idx in score_order(dets) {
        let suppressed = kept
            .iter()
            .any(|&k| iou(&dets[k].bbox, &dets[idx].bbox) > iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    kept
}

pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(min: [f64; 3], max: [f64; 3]) -> Box3 {
        Box3::new(min, max).unwrap()
    }

    fn det(bx: Box3, score: f64) -> Detection {
        Detection::new(bx, score).unwrap()
    }

    #[test]
    fn volume_examples() {
        assert_eq!(volume(&b([0.0; 3], [1.0; 3])), 1.0);
        assert_eq!(volume(&b([2.0; 3], [2.0; 3])), 0.0);
        assert_eq!(volume(&b([0.0; 3], [2.0, 3.0, 4.0])), 24.0);
    }

    #[test]
    fn iou_examples() {
        let a = b([0.0; 3], [2.0; 3]);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b([5.0; 3], [6.0; 3])), 0.0);
        let c = b([1.0; 3], [3.0; 3]);
        assert!((iou(&a, &c) - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let p = b([1.0; 3], [1.0; 3]);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(giou(&p, &p), 0.0);
    }

    #[test]
    fn giou_examples() {
        let a = b([0.0; 3], [2.0; 3]);
        assert_eq!(giou(&a, &a), 1.0);
        let u1 = b([0.0; 3], [1.0; 3]);
        let u2 = b([2.0, 0.0, 0.0], [3.0, 1.0, 1.0]);
        assert!((giou(&u1, &u2) + 1.0 / 3.0).abs() < 1e-15);
        let c = b([1.0; 3], [3.0; 3]);
        let expected = 1.0 / 15.0 - 12.0 / 27.0;
        assert!((giou(&a, &c) - expected).abs() < 1e-15);
        assert!((giou(&a, &c) + 0.3778).abs() < 1e-4);
    }

    #[test]
    fn rejects_inverted_box_and_bad_score() {
        assert!(Box3::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
        assert!(Box3::new([f64::NAN, 0.0, 0.0], [1.0; 3]).is_err());
        assert!(Detection::new(b([0.0; 3], [1.0; 3]), 1.5).is_err());
    }

    #[test]
    fn nms_identical_boxes_keeps_highest() {
        let bx = b([0.0; 3], [2.0; 3]);
        let kept = nms(&[det(bx, 0.8), det(bx, 0.9)], 0.5);
        assert_eq!(kept, vec![det(bx, 0.9)]);
    }

    #[test]
    fn nms_disjoint_boxes_all_survive() {
        let a = det(b([0.0; 3], [1.0; 3]), 0.3);
        let c = det(b([5.0; 3], [6.0; 3]), 0.7);
        assert_eq!(nms(&[a, c], 0.5), vec![c, a]);
    }

    #[test]
    fn nms_chain_keeps_both_ends() {
        // A-B and B-C have IoU 0.6; A-C has IoU 1/3, under the threshold.
        let a = b([0.0, 0.0, 0.0], [4.0, 1.0, 1.0]);
        let bm = b([1.0, 0.0, 0.0], [5.0, 1.0, 1.0]);
        let c = b([2.0, 0.0, 0.0], [6.0, 1.0, 1.0]);
        assert!((iou(&a, &bm) - 0.6).abs() < 1e-12);
        assert!((iou(&bm, &c) - 0.6).abs() < 1e-12);
        assert!((iou(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
        let dets = [det(a, 0.9), det(bm, 0.8), det(c, 0.7)];
        assert_eq!(nms_indices(&dets, 0.5), vec![0, 2]);
    }

    #[test]
    fn nms_threshold_one_never_suppresses() {
        let bx = b([0.0; 3], [2.0; 3]);
        assert_eq!(nms(&[det(bx, 0.5), det(bx, 0.5)], 1.0).len(), 2);
    }

    #[test]
    fn nms_ties_prefer_earlier_input() {
        let bx = b([0.0; 3], [2.0; 3]);
        let shifted = bx.translated([0.1, 0.0, 0.0]);
        assert_eq!(
            nms_indices(&[det(bx, 0.5), det(shifted, 0.5)], 0.5),
            vec![0]
        );
        assert_eq!(
            nms_indices(&[det(shifted, 0.5), det(bx, 0.5)], 0.5),
            vec![0]
        );
    }

    fn arb_box() -> impl Strategy<Value = Box3> {
        (
            prop::array::uniform3(0.0..10.0f64),
            prop::array::uniform3(0.01..5.0f64),
        )
            .prop_map(|(lo, ext)| Box3 {
                min: lo,
                max: [lo[0] + ext[0], lo[1] + ext[1], lo[2] + ext[2]],
            })
    }

    proptest! {
        #[test]
        fn iou_and_giou_are_symmetric(a in arb_box(), c in arb_box()) {
            prop_assert_eq!(iou(&a, &c), iou(&c, &a));
            prop_assert_eq!(giou(&a, &c), giou(&c, &a));
        }

        #[test]
        fn giou_bounded_by_iou(a in arb_box(), c in arb_box()) {
            let (i, g) = (iou(&a, &c), giou(&a, &c));
            prop_assert!(g <= i);
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!((-1.0..=1.0).contains(&g));
        }

        #[test]
        fn invariant_under_translation_and_scale(
            a in arb_box(),
            c in arb_box(),
            d in prop::array::uniform3(-20.0..20.0f64),
            s in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0]),
        ) {
            let (i, g) = (iou(&a, &c), giou(&a, &c));
            let (at, ct) = (a.translated(d), c.translated(d));
            prop_assert!((iou(&at, &ct) - i).abs() < 1e-9);
            prop_assert!((giou(&at, &ct) - g).abs() < 1e-9);
            // power-of-two factors scale exactly
            prop_assert_eq!(iou(&a.scaled(s), &c.scaled(s)), i);
            prop_assert_eq!(giou(&a.scaled(s), &c.scaled(s)), g);
        }

        #[test]
        fn nms_output_is_non_redundant(
            boxes in prop::collection::vec(arb_box(), 0..12),
            scores in prop::collection::vec(0.0..=1.0f64, 12),
            thr in 0.0..=1.0f64,
        ) {
            let dets: Vec<Detection> = boxes.iter().zip(&scores).map(|(&bx, &s)| det(bx, s)).collect();
            let kept = nms(&dets, thr);
            for (i, a) in kept.iter().enumerate() {
                for c in &kept[i + 1..] {
                    prop_assert!(iou(&a.bbox, &c.bbox) <= thr);
                    prop_assert!(a.score >= c.score);
                }
            }
        }
    }
}
