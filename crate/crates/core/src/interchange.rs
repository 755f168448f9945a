//! JSON interchange format for detections and ground truth.
//!
//! ```json
//! { "scans": [ { "id": "case01",
//!                "detections": [ { "box": {"min": [x, y, z], "max": [x, y, z]}, "score": 0.9 } ],
//!                "truth": [ { "box": {"min": [...], "max": [...]}, "center": [x, y, z] } ] } ] }
//! ```
//!
//! `detections` and `truth` are each optional per scan. Writers emit scans
//! sorted by id and detections by descending score.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::froc::ScanResult;
use crate::geometry::{score_order, Box3, Detection};
use crate::labels::LesionInstance;

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("malformed detection file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate scan id {0:?}")]
    DuplicateId(String),
    #[error("scan {scan:?}: score {score} outside [0, 1]")]
    BadScore { scan: String, score: f64 },
    #[error("detections for scan {0:?}, which has no ground truth entry")]
    UnknownScan(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_mm3: Option<f64>,
}

impl From<&LesionInstance> for TruthEntry {
    fn from(inst: &LesionInstance) -> Self {
        Self {
            bbox: inst.bbox,
            center: inst.center,
            id: Some(inst.id),
            voxel_count: Some(inst.voxel_count),
            volume_mm3: Some(inst.volume_mm3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<TruthEntry>>,
}

impl ScanEntry {
    pub fn with_truth(id: impl Into<String>, instances: &[LesionInstance]) -> Self {
        Self {
            id: id.into(),
            detections: None,
            truth: Some(instances.iter().map(TruthEntry::from).collect()),
        }
    }

    pub fn with_detections(id: impl Into<String>, detections: Vec<Detection>) -> Self {
        Self {
            id: id.into(),
            detections: Some(detections),
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionFile {
    pub scans: Vec<ScanEntry>,
}

impl DetectionFile {
    pub fn from_json(text: &str) -> Result<Self, InterchangeError> {
        let file: DetectionFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    /// Pretty JSON in canonical order, newline-terminated.
    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(&self.canonical()).expect("plain data serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<(), InterchangeError> {
        let mut seen = HashSet::new();
        for scan in &self.scans {
            if !seen.insert(scan.id.as_str()) {
                return Err(InterchangeError::DuplicateId(scan.id.clone()));
            }
            for d in scan.detections.iter().flatten() {
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(InterchangeError::BadScore {
                        scan: scan.id.clone(),
                        score: d.score,
                    });
                }
            }
        }
        Ok(())
    }

    /// Scans sorted by id, detections by descending score (stable).
    pub fn canonical(&self) -> DetectionFile {
        let mut scans = self.scans.clone();
        scans.sort_by(|a, b| a.id.cmp(&b.id));
        for s in &mut scans {
            if let Some(dets) = &s.detections {
                s.detections = Some(score_order(dets).into_iter().map(|i| dets[i]).collect());
            }
        }
        DetectionFile { scans }
    }

    /// Build evaluation inputs. Truth comes from `truth` when given,
    /// otherwise from this file. Every scan with truth (even an empty list)
    /// or listed in the truth source is evaluated; a detection scan missing
    /// from the truth source is an error.
    pub fn to_scan_results(
        &self,
        truth: Option<&DetectionFile>,
    ) -> Result<Vec<ScanResult>, InterchangeError> {
        let truth_src = truth.unwrap_or(self);
        let mut scans: BTreeMap<&str, ScanResult> = truth_src
            .scans
            .iter()
            .map(|s| {
                let gts = s.truth.iter().flatten().map(|t| t.bbox).collect();
                (
                    s.id.as_str(),
                    ScanResult {
                        scan_id: s.id.clone(),
                        gts,
                        detections: Vec::new(),
                    },
                )
            })
            .collect();
        for s in &self.scans {
            let Some(dets) = &s.detections else { continue };
            match scans.get_mut(s.id.as_str()) {
                Some(target) => target.detections.extend_from_slice(dets),
                None => return Err(InterchangeError::UnknownScan(s.id.clone())),
            }
        }
        Ok(scans.into_values().collect())
    }
}
