use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lesionbox::froc::{froc_report, FrocReport};
use lesionbox::interchange::{DetectionFile, InterchangeError, ScanEntry};
use lesionbox::labels::extract_instances;
use lesionbox::nifti_io::{read_nifti, write_nifti};
use lesionbox::phantom::{baseline_detect, generate, PhantomSpec};
use lesionbox::preprocess::{crop_nonzero, resample, zscore, Interpolation};
use lesionbox::{nms, Connectivity, Volume3};
use rayon::prelude::*;
use tempfile::NamedTempFile;

use crate::CliError;

/// Scan id of a volume path: the file name without `.nii` / `.nii.gz`.
pub fn scan_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".nii.gz", ".nii"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_string();
        }
    }
    name
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn load_volume(path: &Path) -> Result<Volume3, CliError> {
    let bytes = fs::read(path).map_err(|e| input_err(path, e))?;
    read_nifti(&bytes).map_err(|e| input_err(path, e))
}

fn load_detection_file(path: &Path) -> Result<DetectionFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    DetectionFile::from_json(&text).map_err(|e| match e {
        InterchangeError::DuplicateId(_) => {
            CliError::Consistency(format!("{}: {e}", path.display()))
        }
        _ => input_err(path, e),
    })
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let write = || -> std::io::Result<()> {
        let mut tmp = NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    };
    write().map_err(|e| input_err(path, e))
}

fn unique_ids(scans: &[ScanEntry]) -> Result<(), CliError> {
    let mut ids: Vec<&str> = scans.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    match ids.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(CliError::Consistency(format!(
            "two inputs map to scan id {:?}",
            w[0]
        ))),
        None => Ok(()),
    }
}

pub fn gt_extract(
    masks: &[PathBuf],
    connectivity: Connectivity,
    min_voxels: usize,
) -> Result<DetectionFile, CliError> {
    let scans = masks
        .par_iter()
        .map(|path| {
            let mask = load_volume(path)?;
            let instances = extract_instances(&mask, connectivity, min_voxels);
            Ok(ScanEntry::with_truth(scan_id(path), &instances))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    unique_ids(&scans)?;
    Ok(DetectionFile { scans }.canonical())
}

/// One line per lesion: `scan lesion id: (x, y, z), n voxels`, center rounded
/// to the nearest voxel index.
pub fn center_table(file: &DetectionFile) -> String {
    let mut out = String::new();
    for scan in &file.scans {
        for (k, t) in scan.truth.iter().flatten().enumerate() {
            let c = t.center.map(|v| v.round() as i64);
            out.push_str(&format!(
                "{} lesion {}: ({}, {}, {}), {} voxels\n",
                scan.id,
                t.id.unwrap_or(k as u32 + 1),
                c[0],
                c[1],
                c[2],
                t.voxel_count.unwrap_or(0)
            ));
        }
    }
    out
}

pub struct PreprocessOutcome {
    pub offset: [usize; 3],
    pub mean_after_zscore: f64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

/// crop -> z-score -> resample, written as float32 NIfTI.
pub fn preprocess(
    image: &Path,
    spacing: Option<[f64; 3]>,
    interpolation: Interpolation,
    out: &Path,
) -> Result<PreprocessOutcome, CliError> {
    if let Some(s) = spacing {
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::Input(format!(
                "target spacing must be positive, got {s:?}"
            )));
        }
    }
    let vol = load_volume(image)?;
    let crop = crop_nonzero(&vol);
    let normalized = zscore(&crop.volume);
    let mean_after_zscore = normalized.data().iter().sum::<f64>() / normalized.len() as f64;
    let target = spacing.unwrap_or(normalized.spacing());
    let resampled = resample(&normalized, target, interpolation);
    let bytes = write_nifti(&resampled).map_err(|e| input_err(out, e))?;
    write_atomic(out, &bytes)?;
    Ok(PreprocessOutcome {
        offset: crop.offset,
        mean_after_zscore,
        dims: resampled.dims(),
        spacing: resampled.spacing(),
    })
}

pub fn eval(
    detections: &Path,
    truth: Option<&Path>,
    iou_threshold: f64,
    operating_points: &[f64],
    out_dir: Option<&Path>,
) -> Result<FrocReport, CliError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(CliError::Input(format!(
            "IoU threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    if let Some(q) = operating_points
        .iter()
        .find(|q| !(q.is_finite() && **q >= 0.0))
    {
        return Err(CliError::Input(format!(
            "operating points must be finite and >= 0, got {q}"
        )));
    }
    let dets = load_detection_file(detections)?;
    let truth_file = truth.map(load_detection_file).transpose()?;
    let scans = dets
        .to_scan_results(truth_file.as_ref())
        .map_err(|e| match e {
            InterchangeError::UnknownScan(id) => CliError::Consistency(format!(
                "detections for scan {id:?} have no ground truth entry"
            )),
            other => CliError::Input(other.to_string()),
        })?;
    if scans.is_empty() {
        return Err(CliError::Input("no scans to evaluate".into()));
    }
    let report = froc_report(&scans, iou_threshold, operating_points);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| input_err(dir, e))?;
        write_atomic(&dir.join("froc.csv"), report.curve_csv().as_bytes())?;
        if let Some(points) = report.operating_points_csv() {
            write_atomic(&dir.join("froc_points.csv"), points.as_bytes())?;
        }
        write_atomic(&dir.join("froc.svg"), report.svg().as_bytes())?;
    }
    Ok(report)
}

pub fn detect_baseline(
    images: &[PathBuf],
    threshold: f64,
    min_voxels: usize,
    nms_iou: f64,
) -> Result<DetectionFile, CliError> {
    if !threshold.is_finite() {
        return Err(CliError::Input(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    if !(0.0..=1.0).contains(&nms_iou) {
        return Err(CliError::Input(format!(
            "NMS IoU must be in [0, 1], got {nms_iou}"
        )));
    }
    let scans = images
        .par_iter()
        .map(|path| {
            let image = load_volume(path)?;
            let dets = nms(&baseline_detect(&image, threshold, min_voxels), nms_iou);
            Ok(ScanEntry::with_detections(scan_id(path), dets))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    unique_ids(&scans)?;
    Ok(DetectionFile { scans }.canonical())
}

/// Files written by [`phantom`]; the truth scan id matches the image stem so
/// `detect-baseline` output on the image evaluates against it directly.
pub const PHANTOM_IMAGE: &str = "image.nii";
pub const PHANTOM_MASK: &str = "mask.nii";
pub const PHANTOM_TRUTH: &str = "truth.json";

pub fn phantom(spec: &PhantomSpec, out_dir: &Path) -> Result<usize, CliError> {
    let p = generate(spec).map_err(|e| CliError::Input(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| input_err(out_dir, e))?;
    let image = write_nifti(&p.image).map_err(|e| CliError::Input(e.to_string()))?;
    let mask = write_nifti(&p.mask).map_err(|e| CliError::Input(e.to_string()))?;
    let truth = DetectionFile {
        scans: vec![ScanEntry::with_truth(
            scan_id(Path::new(PHANTOM_IMAGE)),
            &p.truth,
        )],
    };
    write_atomic(&out_dir.join(PHANTOM_IMAGE), &image)?;
    write_atomic(&out_dir.join(PHANTOM_MASK), &mask)?;
    write_atomic(&out_dir.join(PHANTOM_TRUTH), truth.to_json().as_bytes())?;
    Ok(p.truth.len())
}
