//! Synthetic angiography-like phantoms with implanted ellipsoidal lesions,
//! plus a threshold-and-label baseline detector.
//!
//! Generation is a pure function of [`PhantomSpec`]. The random stream is
//! ChaCha8 keyed with the little-endian seed in the first 8 key bytes (rest
//! zero, stream 0). Uniform draws are `(next_u64 >> 11) * 2^-53` and every
//! draw happens in the order documented on [`generate`], so the stream can
//! be reproduced outside Rust.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Detection;
use crate::labels::{connected_components, Connectivity, LesionInstance};
use crate::volume::Volume3;

/// Attempts per lesion before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("placed {placed} of {requested} lesions; no free position after {MAX_PLACEMENT_ATTEMPTS} attempts")]
    PlacementFailure { placed: usize, requested: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    /// mm per voxel.
    pub spacing: [f64; 3],
    pub n_lesions: usize,
    /// Semi-axis range in mm.
    pub lesion_radius_range: (f64, f64),
    pub vessel_count: usize,
    pub vessel_radius: f64,
    pub background_intensity: f64,
    pub vessel_intensity: f64,
    pub lesion_intensity: f64,
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: [64, 64, 64],
            spacing: [1.0; 3],
            n_lesions: 3,
            lesion_radius_range: (2.0, 4.0),
            vessel_count: 4,
            vessel_radius: 1.5,
            background_intensity: 0.0,
            vessel_intensity: 100.0,
            lesion_intensity: 200.0,
            noise_sigma: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if self.dims.contains(&0) {
            return bad(format!("dims {:?}", self.dims));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("spacing {:?}", self.spacing));
        }
        let (lo, hi) = self.lesion_radius_range;
        let smallest_extent = (0..3)
            .map(|a| self.dims[a] as f64 * self.spacing[a])
            .fold(f64::INFINITY, f64::min);
        if !(lo > 0.0 && lo <= hi && hi <= smallest_extent / 4.0) {
            return bad(format!(
                "lesion radius range ({lo}, {hi}) must satisfy 0 < min <= max <= {}",
                smallest_extent / 4.0
            ));
        }
        if !(self.vessel_radius.is_finite() && self.vessel_radius > 0.0) {
            return bad(format!("vessel radius {}", self.vessel_radius));
        }
        if !(self.lesion_intensity > self.vessel_intensity
            && self.vessel_intensity > self.background_intensity)
        {
            return bad("intensities must satisfy lesion > vessel > background".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume3,
    /// 1 inside lesions, 0 elsewhere.
    pub mask: Volume3,
    pub truth: Vec<LesionInstance>,
}

struct Stream(ChaCha8Rng);

impl Stream {
    fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self(ChaCha8Rng::from_seed(key))
    }

    /// Uniform in [0, 1).
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Uniform direction: z = 2u - 1, then azimuth 2πu.
    fn unit_vector(&mut self) -> [f64; 3] {
        let z = 2.0 * self.uniform() - 1.0;
        let phi = std::f64::consts::TAU * self.uniform();
        let r = (1.0 - z * z).max(0.0).sqrt();
        [r * phi.cos(), r * phi.sin(), z]
    }

    /// Box-Muller, cosine branch only.
    fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0]
    } else {
        v.map(|c| c / n)
    }
}

fn dist_to_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    fn index(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    /// Largest physical coordinate (center of the last voxel) per axis.
    fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.dims[a] - 1) as f64 * self.spacing[a])
    }

    /// Inclusive voxel index range whose centers fall in `[lo, hi]` mm, clamped.
    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let s = self.spacing[axis];
        let first = (lo / s).ceil().max(0.0);
        let last = (hi / s).floor().min((self.dims[axis] - 1) as f64);
        (first <= last).then_some((first as usize, last as usize))
    }
}

/// Random-walk centerline, in mm, starting inside the volume and stopping
/// when it leaves.
fn vessel_path(stream: &mut Stream, grid: &Grid) -> Vec<[f64; 3]> {
    let ext = grid.extent();
    let step = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_steps = 4 * grid.dims.iter().max().copied().unwrap_or(1);
    let mut p = [0, 1, 2].map(|a| stream.uniform() * ext[a]);
    let mut dir = stream.unit_vector();
    let mut path = vec![p];
    for _ in 0..max_steps {
        let jitter = stream.unit_vector();
        dir = normalize([0, 1, 2].map(|a| dir[a] + 0.35 * jitter[a]));
        p = [0, 1, 2].map(|a| p[a] + step * dir[a]);
        if (0..3).any(|a| p[a] < 0.0 || p[a] > ext[a]) {
            break;
        }
        path.push(p);
    }
    path
}

fn paint_tube(grid: &Grid, path: &[[f64; 3]], radius: f64, out: &mut [bool]) {
    let segments: Vec<([f64; 3], [f64; 3])> = if path.len() == 1 {
        vec![(path[0], path[0])]
    } else {
        path.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in segments {
        let ranges: Option<Vec<(usize, usize)>> = (0..3)
            .map(|ax| grid.index_range(ax, a[ax].min(b[ax]) - radius, a[ax].max(b[ax]) + radius))
            .collect();
        let Some(r) = ranges else { continue };
        for z in r[2].0..=r[2].1 {
            for y in r[1].0..=r[1].1 {
                for x in r[0].0..=r[0].1 {
                    let p = [x, y, z];
                    let mm = [0, 1, 2].map(|ax| p[ax] as f64 * grid.spacing[ax]);
                    if dist_to_segment(mm, a, b) <= radius {
                        out[grid.index(p)] = true;
                    }
                }
            }
        }
    }
}

/// Voxels whose centers lie inside the axis-aligned ellipsoid, or `None` if
/// it does not fit with a one-voxel margin from the volume border.
fn voxelize_ellipsoid(grid: &Grid, center: [f64; 3], radii: [f64; 3]) -> Option<Vec<[usize; 3]>> {
    let mut ranges = [(0usize, 0usize); 3];
    for a in 0..3 {
        let s = grid.spacing[a];
        let lo = ((center[a] - radii[a]) / s).ceil();
        let hi = ((center[a] + radii[a]) / s).floor();
        if !(lo >= 1.0 && hi <= (grid.dims[a] as f64 - 2.0) && lo <= hi) {
            return None;
        }
        ranges[a] = (lo as usize, hi as usize);
    }
    let mut voxels = Vec::new();
    for z in ranges[2].0..=ranges[2].1 {
        for y in ranges[1].0..=ranges[1].1 {
            for x in ranges[0].0..=ranges[0].1 {
                let p = [x, y, z];
                let r2: f64 = (0..3)
                    .map(|a| ((p[a] as f64 * grid.spacing[a] - center[a]) / radii[a]).powi(2))
                    .sum();
                if r2 <= 1.0 {
                    voxels.push(p);
                }
            }
        }
    }
    (!voxels.is_empty()).then_some(voxels)
}

/// True if no voxel in the 26-neighbourhood (or the voxel itself) is occupied.
fn isolated(grid: &Grid, voxels: &[[usize; 3]], occupied: &[bool]) -> bool {
    voxels.iter().all(|v| {
        (-1isize..=1).all(|dz| {
            (-1isize..=1).all(|dy| {
                (-1isize..=1).all(|dx| {
                    let q = [v[0] as isize + dx, v[1] as isize + dy, v[2] as isize + dz];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= grid.dims[a] as isize) {
                        return true;
                    }
                    !occupied[grid.index(q.map(|c| c as usize))]
                })
            })
        })
    })
}

/// Build a phantom.
///
/// Draw order: for each vessel, a start point (3 uniforms), a direction,
/// then one jitter direction per step; for each lesion attempt, 3 semi-axes,
/// then (when vessels exist) a vessel index, a centerline point index and a
/// direction, otherwise 3 uniforms for the center; finally, if
/// `noise_sigma > 0`, one Gaussian (2 uniforms) per voxel in x-fastest order.
///
/// Lesions sit against a vessel wall: the ellipsoid center is pushed out from
/// a centerline point by the vessel radius, the ellipsoid's reach in that
/// direction and one voxel. A candidate is rejected unless every voxel lies
/// at least one voxel (26-neighbourhood) away from vessels and other lesions
/// and the ellipsoid clears the volume border, so each lesion stays its own
/// connected component in both the mask and a thresholded image.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let grid = Grid {
        dims: spec.dims,
        spacing: spec.spacing,
    };
    let n: usize = spec.dims.iter().product();
    let mut stream = Stream::new(spec.seed);

    let mut vessel = vec![false; n];
    let mut paths = Vec::with_capacity(spec.vessel_count);
    for _ in 0..spec.vessel_count {
        let path = vessel_path(&mut stream, &grid);
        paint_tube(&grid, &path, spec.vessel_radius, &mut vessel);
        paths.push(path);
    }

    let gap = spec.spacing.iter().cloned().fold(0.0, f64::max);
    let ext = grid.extent();
    let (rmin, rmax) = spec.lesion_radius_range;
    let mut occupied = vessel.clone();
    let mut lesion = vec![false; n];
    for placed in 0..spec.n_lesions {
        let mut accepted = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let radii = [0, 1, 2].map(|_| stream.range(rmin, rmax));
            let center = if paths.is_empty() {
                [0, 1, 2].map(|a| stream.uniform() * ext[a])
            } else {
                let path = &paths[stream.index(paths.len())];
                let anchor = path[stream.index(path.len())];
                let d = stream.unit_vector();
                let reach = 1.0
                    / (0..3)
                        .map(|a| (d[a] / radii[a]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                let push = spec.vessel_radius + reach + gap;
                [0, 1, 2].map(|a| anchor[a] + d[a] * push)
            };
            if let Some(voxels) = voxelize_ellipsoid(&grid, center, radii) {
                if isolated(&grid, &voxels, &occupied) {
                    accepted = Some(voxels);
                    break;
                }
            }
        }
        let Some(voxels) = accepted else {
            return Err(PhantomError::PlacementFailure {
                placed,
                requested: spec.n_lesions,
            });
        };
        for v in voxels {
            let i = grid.index(v);
            occupied[i] = true;
            lesion[i] = true;
        }
    }

    let mut image: Vec<f64> = (0..n)
        .map(|i| {
            if lesion[i] {
                spec.lesion_intensity
            } else if vessel[i] {
                spec.vessel_intensity
            } else {
                spec.background_intensity
            }
        })
        .collect();
    if spec.noise_sigma > 0.0 {
        for v in &mut image {
            *v += spec.noise_sigma * stream.gaussian();
        }
    }

    let image = Volume3::with_spacing(spec.dims, spec.spacing, image).expect("validated spec");
    let mask = image
        .with_data(lesion.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect())
        .expect("same geometry");
    let truth = connected_components(&mask, Connectivity::TwentySix);
    Ok(Phantom { image, mask, truth })
}

/// Threshold detector: voxels `>= intensity_threshold` are grouped with
/// 26-connectivity; components with at least `min_voxels` voxels become
/// detections with their tight box and score
/// `clamp(mean component intensity / max image intensity, 0, 1)`.
pub fn baseline_detect(
    image: &Volume3,
    intensity_threshold: f64,
    min_voxels: usize,
) -> Vec<Detection> {
    baseline_components(image, intensity_threshold, min_voxels)
        .into_iter()
        .map(|(inst, score)| Detection {
            bbox: inst.bbox,
            score,
        })
        .collect()
}

/// The components behind [`baseline_detect`], in the same order, with their
/// scores. Useful when the center of mass of a detection is needed.
pub fn baseline_components(
    image: &Volume3,
    intensity_threshold: f64,
    min_voxels: usize,
) -> Vec<(LesionInstance, f64)> {
    let binary = image
        .with_data(
            image
                .data()
                .iter()
                .map(|&v| if v >= intensity_threshold { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("same geometry");
    let peak = image
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    connected_components(&binary, Connectivity::TwentySix)
        .into_iter()
        .filter(|inst| inst.voxel_count >= min_voxels)
        .map(|inst| {
            let mean = inst
                .voxels
                .iter()
                .map(|v| image.get(v[0], v[1], v[2]))
                .sum::<f64>()
                / inst.voxel_count as f64;
            let ratio = mean / peak;
            let score = if ratio.is_finite() {
                ratio.clamp(0.0, 1.0)
            } else {
                0.0
            };
            (inst, score)
        })
        .collect()
}
