//! `lesionbox` command-line tool.
//!
//! Exit codes: 0 success, 2 input or parse error, 3 consistency error
//! (duplicate scan ids, detections without ground truth).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use lesionbox::froc::{DEFAULT_IOU_THRESHOLD, DEFAULT_OPERATING_POINTS};
use lesionbox::interchange::DetectionFile;
use lesionbox::preprocess::Interpolation;
use lesionbox::Connectivity;

use config::Config;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Consistency(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Consistency(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Consistency(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lesionbox",
    version,
    about = "Lesion box extraction, baseline detection and FROC evaluation"
)]
struct Cli {
    /// TOML file with per-command defaults; command-line flags take precedence.
    #[arg(long, global = true, value_name = "TOML")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract ground-truth lesions (boxes and centers of mass) from NIfTI masks.
    GtExtract {
        #[arg(required = true)]
        masks: Vec<PathBuf>,
        /// 6 or 26 [default: 26]
        #[arg(long, value_parser = parse_connectivity)]
        connectivity: Option<Connectivity>,
        /// Drop components smaller than this [default: 1]
        #[arg(long)]
        min_voxels: Option<usize>,
        /// Write the truth JSON here and print a center table instead.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Crop to the non-zero region, z-score, and resample an image.
    Preprocess {
        image: PathBuf,
        /// Target spacing in mm as x,y,z [default: keep]
        #[arg(long, value_parser = parse_triple::<f64>)]
        spacing: Option<[f64; 3]>,
        /// Nearest-neighbour instead of trilinear interpolation (for masks).
        #[arg(long)]
        nearest: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// FROC evaluation of a detection file against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        /// Separate truth file; otherwise truth is read from the detection file.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// [default: 0.3]
        #[arg(long)]
        iou_threshold: Option<f64>,
        /// Comma-separated operating points [default: 0.25,0.5,1,2]
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        fpps: Option<Vec<f64>>,
        /// Write froc.csv, froc_points.csv and froc.svg here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Threshold-and-label detector followed by NMS.
    DetectBaseline {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Intensity threshold (inclusive).
        #[arg(long)]
        threshold: Option<f64>,
        /// [default: 1]
        #[arg(long)]
        min_voxels: Option<usize>,
        /// [default: 0.5]
        #[arg(long)]
        nms_iou: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic phantom: image.nii, mask.nii and truth.json.
    Phantom {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Voxel counts as x,y,z
        #[arg(long, value_parser = parse_triple::<usize>)]
        dims: Option<[usize; 3]>,
        /// mm per voxel as x,y,z
        #[arg(long, value_parser = parse_triple::<f64>)]
        spacing: Option<[f64; 3]>,
        #[arg(long)]
        n_lesions: Option<usize>,
        /// Lesion semi-axis range in mm as min,max
        #[arg(long, value_parser = parse_range)]
        lesion_radius: Option<(f64, f64)>,
        #[arg(long)]
        vessel_count: Option<usize>,
        #[arg(long)]
        vessel_radius: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    let n: u32 = s
        .parse()
        .map_err(|_| format!("expected 6 or 26, got {s:?}"))?;
    Connectivity::try_from(n).map_err(|e| e.to_string())
}

fn parse_triple<T: FromStr + Copy>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| format!("bad number {p:?}"))
        })
        .collect::<Result<_, _>>()?;
    <[T; 3]>::try_from(parts)
        .map_err(|_| format!("expected three comma-separated values, got {s:?}"))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    match s.split_once(',') {
        Some((a, b)) => Ok((
            a.trim().parse().map_err(|_| format!("bad number {a:?}"))?,
            b.trim().parse().map_err(|_| format!("bad number {b:?}"))?,
        )),
        None => Err(format!("expected min,max, got {s:?}")),
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("LESIONBOX_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "LESIONBOX_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn emit_json(file: &DetectionFile, output: Option<&PathBuf>) -> Result<(), CliError> {
    let json = file.to_json();
    match output {
        Some(path) => commands::write_atomic(path, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GtExtract {
            masks,
            connectivity,
            min_voxels,
            output,
        } => {
            let conn = connectivity
                .or(cfg.gt_extract.connectivity)
                .unwrap_or_default();
            let min = min_voxels.or(cfg.gt_extract.min_voxels).unwrap_or(1);
            let file = commands::gt_extract(&masks, conn, min)?;
            emit_json(&file, output.as_ref())?;
            if output.is_some() {
                print!("{}", commands::center_table(&file));
            }
        }
        Command::Preprocess {
            image,
            spacing,
            nearest,
            output,
        } => {
            let mode = if nearest {
                Interpolation::Nearest
            } else {
                Interpolation::Trilinear
            };
            let target = spacing.or(cfg.preprocess.spacing);
            let out = commands::preprocess(&image, target, mode, &output)?;
            eprintln!("mean after z-score: {:e}", out.mean_after_zscore);
            println!(
                "crop offset: {} {} {}",
                out.offset[0], out.offset[1], out.offset[2]
            );
            println!(
                "output dims: {} {} {}, spacing: {} {} {}",
                out.dims[0],
                out.dims[1],
                out.dims[2],
                out.spacing[0],
                out.spacing[1],
                out.spacing[2]
            );
        }
        Command::Eval {
            detections,
            truth,
            iou_threshold,
            fpps,
            out_dir,
        } => {
            let iou = iou_threshold
                .or(cfg.eval.iou_threshold)
                .unwrap_or(DEFAULT_IOU_THRESHOLD);
            let points = fpps
                .or(cfg.eval.fpps)
                .unwrap_or_else(|| DEFAULT_OPERATING_POINTS.to_vec());
            let report = commands::eval(
                &detections,
                truth.as_deref(),
                iou,
                &points,
                out_dir.as_deref(),
            )?;
            print!("{}", report.table());
        }
        Command::DetectBaseline {
            images,
            threshold,
            min_voxels,
            nms_iou,
            output,
        } => {
            let threshold = threshold.or(cfg.detect_baseline.threshold).ok_or_else(|| {
                CliError::Input("--threshold is required (flag or config)".into())
            })?;
            let min = min_voxels.or(cfg.detect_baseline.min_voxels).unwrap_or(1);
            let nms_iou = nms_iou.or(cfg.detect_baseline.nms_iou).unwrap_or(0.5);
            let file = commands::detect_baseline(&images, threshold, min, nms_iou)?;
            emit_json(&file, output.as_ref())?;
        }
        Command::Phantom {
            out_dir,
            seed,
            dims,
            spacing,
            n_lesions,
            lesion_radius,
            vessel_count,
            vessel_radius,
            noise_sigma,
        } => {
            let mut spec = cfg.phantom.unwrap_or_default();
            spec.seed = seed.unwrap_or(spec.seed);
            spec.dims = dims.unwrap_or(spec.dims);
            spec.spacing = spacing.unwrap_or(spec.spacing);
            spec.n_lesions = n_lesions.unwrap_or(spec.n_lesions);
            spec.lesion_radius_range = lesion_radius.unwrap_or(spec.lesion_radius_range);
            spec.vessel_count = vessel_count.unwrap_or(spec.vessel_count);
            spec.vessel_radius = vessel_radius.unwrap_or(spec.vessel_radius);
            spec.noise_sigma = noise_sigma.unwrap_or(spec.noise_sigma);
            let n = commands::phantom(&spec, &out_dir)?;
            println!(
                "wrote phantom (seed {}, {n} lesions) to {}",
                spec.seed,
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
