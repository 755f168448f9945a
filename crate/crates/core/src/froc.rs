//! Lesion-level FROC analysis.
//!
//! Detections are matched greedily to ground-truth boxes by box IoU in score
//! order. Sweeping the score threshold over every distinct detection score
//! gives the (false positives per scan, sensitivity) staircase.

use std::fmt::Write as _;

use crate::geometry::{iou, score_order, Box3, Detection};

/// Operating points reported by default, in false positives per scan.
pub const DEFAULT_OPERATING_POINTS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub scan_id: String,
    pub gts: Vec<Box3>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionLabel {
    TruePositive(usize),
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanMatch {
    /// One label per detection, in input order.
    pub labels: Vec<DetectionLabel>,
    pub gt_hit: Vec<bool>,
}

impl ScanMatch {
    pub fn true_positives(&self) -> usize {
        self.gt_hit.iter().filter(|h| **h).count()
    }

    pub fn false_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == DetectionLabel::FalsePositive)
            .count()
    }
}

/// Greedy matching of one scan.
///
/// Detections are visited by descending score (ties in input order). A
/// detection hits the unmatched box with the highest IoU, provided that IoU
/// is at least `iou_threshold` (ties to the lowest box index); otherwise it
/// is a false positive. A box is matched at most once, so duplicate hits on
/// one lesion count as false positives.
pub fn match_scan(scan: &ScanResult, iou_threshold: f64) -> ScanMatch {
    match_detections(&scan.gts, &scan.detections, iou_threshold)
}

fn match_detections(gts: &[Box3], dets: &[Detection], iou_threshold: f64) -> ScanMatch {
    let mut labels = vec![DetectionLabel::FalsePositive; dets.len()];
    let mut gt_hit = vec![false; gts.len()];
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_hit[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, gt);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_hit[g] = true;
            labels[d] = DetectionLabel::TruePositive(g);
        }
    }
    ScanMatch { labels, gt_hit }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrocPoint {
    pub fpps: f64,
    pub sensitivity: f64,
    pub false_positives: usize,
    pub true_positives: usize,
    /// Lowest detection score kept at this point; infinite for the empty cut.
    pub score_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrocCurve {
    /// Sorted by ascending fpps, one point per distinct fpps value.
    pub points: Vec<FrocPoint>,
    pub num_scans: usize,
    pub num_gts: usize,
}

/// FROC curve over a dataset of scans.
///
/// Every distinct score `s` (plus the empty cut, which yields `(0, 0)`)
/// keeps the detections scoring at least `s` and rematches every scan. Cuts
/// that land on the same fpps are merged, keeping the highest sensitivity.
/// Scans without lesions still count towards the per-scan average. With no
/// lesions at all the sensitivity is 0 everywhere.
///
/// Panics if `scans` is empty.
pub fn froc_curve(scans: &[ScanResult], iou_threshold: f64) -> FrocCurve {
    assert!(!scans.is_empty(), "FROC needs at least one scan");
    let num_scans = scans.len();
    let num_gts: usize = scans.iter().map(|s| s.gts.len()).sum();

    let mut cuts: Vec<f64> = scans
        .iter()
        .flat_map(|s| s.detections.iter().map(|d| d.score))
        .collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();

    let point = |threshold: f64, fp: usize, tp: usize| FrocPoint {
        fpps: fp as f64 / num_scans as f64,
        sensitivity: if num_gts == 0 {
            0.0
        } else {
            tp as f64 / num_gts as f64
        },
        false_positives: fp,
        true_positives: tp,
        score_threshold: threshold,
    };

    let mut points = vec![point(f64::INFINITY, 0, 0)];
    for &cut in &cuts {
        let (mut fp, mut tp) = (0, 0);
        for scan in scans {
            let kept: Vec<Detection> = scan
                .detections
                .iter()
                .filter(|d| d.score >= cut)
                .copied()
                .collect();
            let m = match_detections(&scan.gts, &kept, iou_threshold);
            fp += m.false_positives();
            tp += m.true_positives();
        }
        let p = point(cut, fp, tp);
        let last = points.last_mut().expect("non-empty");
        if last.false_positives == fp {
            if tp >= last.true_positives {
                *last = p;
            }
        } else {
            points.push(p);
        }
    }

    FrocCurve {
        points,
        num_scans,
        num_gts,
    }
}

/// Highest sensitivity reachable at or below `fpps_query` false positives per
/// scan (staircase reading of the curve); 0 if no point qualifies.
pub fn sensitivity_at(curve: &FrocCurve, fpps_query: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.fpps <= fpps_query)
        .map(|p| p.sensitivity)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrocReport {
    pub curve: FrocCurve,
    pub iou_threshold: f64,
    /// `(fpps, sensitivity)` per requested operating point.
    pub operating_points: Vec<(f64, f64)>,
}

pub fn froc_report(
    scans: &[ScanResult],
    iou_threshold: f64,
    operating_points: &[f64],
) -> FrocReport {
    let curve = froc_curve(scans, iou_threshold);
    let operating_points = operating_points
        .iter()
        .map(|&q| (q, sensitivity_at(&curve, q)))
        .collect();
    FrocReport {
        curve,
        iou_threshold,
        operating_points,
    }
}

fn csv_rows<'a>(rows: impl Iterator<Item = (f64, f64)> + 'a) -> String {
    let mut out = String::from("fpps,sensitivity\n");
    for (f, s) in rows {
        writeln!(out, "{f:.6},{s:.6}").expect("writing to a String");
    }
    out
}

impl FrocReport {
    /// The full curve as CSV.
    pub fn curve_csv(&self) -> String {
        csv_rows(self.curve.points.iter().map(|p| (p.fpps, p.sensitivity)))
    }

    /// Sensitivity at each requested operating point as CSV; `None` when no
    /// operating points were requested.
    pub fn operating_points_csv(&self) -> Option<String> {
        if self.operating_points.is_empty() {
            None
        } else {
            Some(csv_rows(self.operating_points.iter().copied()))
        }
    }

    /// Human-readable `fpps, sensitivity` table.
    pub fn table(&self) -> String {
        let mut out = String::from("fpps, sensitivity\n");
        for (f, s) in &self.operating_points {
            writeln!(out, "{f:?}, {s:.4}").expect("writing to a String");
        }
        out
    }

    /// Staircase plot of the curve with the operating points marked.
    pub fn svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 360.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 20.0;
        const TOP: f64 = 20.0;
        const BOTTOM: f64 = 50.0;
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;

        let x_max = self
            .curve
            .points
            .iter()
            .map(|p| p.fpps)
            .chain(self.operating_points.iter().map(|(f, _)| *f))
            .fold(1.0, f64::max);
        let sx = |f: f64| LEFT + f / x_max * pw;
        let sy = |s: f64| TOP + (1.0 - s) * ph;

        let mut path: Vec<(f64, f64)> = Vec::new();
        for p in &self.curve.points {
            if let Some(&(_, prev_s)) = path.last() {
                path.push((p.fpps, prev_s));
            }
            path.push((p.fpps, p.sensitivity));
        }
        if let Some(&(_, s)) = path.last() {
            path.push((x_max, s));
        }
        let poly: Vec<String> = path
            .iter()
            .map(|&(f, s)| format!("{:.2},{:.2}", sx(f), sy(s)))
            .collect();

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<path d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="black"/>"#,
            LEFT,
            TOP,
            LEFT,
            TOP + ph,
            LEFT + pw,
            TOP + ph
        );
        for i in 0..=4 {
            let s = i as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{s:.2}</text>"#,
                LEFT - 6.0,
                sy(s) + 4.0
            );
            let f = x_max * i as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{f:.2}</text>"#,
                sx(f),
                TOP + ph + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">FPPS</text>"#,
            LEFT + pw / 2.0,
            H - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">Sensitivity</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            poly.join(" ")
        );
        for (f, s) in &self.operating_points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="firebrick"/>"#,
                sx(*f),
                sy(*s)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}
