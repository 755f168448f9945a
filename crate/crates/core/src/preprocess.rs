//! Intensity and geometry preprocessing: foreground cropping, z-score
//! normalization and spacing resampling.

use crate::numeric::{compensated_mean, compensated_sum};
use crate::volume::{Affine, Volume3};

/// Divisor guard for constant volumes.
pub const ZSCORE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CropResult {
    pub volume: Volume3,
    /// Voxel index of the crop origin in the source volume.
    pub offset: [usize; 3],
}

/// Minimal sub-volume holding every non-zero voxel. An all-zero volume is
/// returned whole with a zero offset.
///
/// The affine is shifted so that cropped voxels keep their world positions.
pub fn crop_nonzero(vol: &Volume3) -> CropResult {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &v) in vol.data().iter().enumerate() {
        if v != 0.0 {
            any = true;
            let c = vol.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if !any {
        return CropResult {
            volume: vol.clone(),
            offset: [0; 3],
        };
    }
    let new_dims = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
    let mut data = Vec::with_capacity(new_dims.iter().product());
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            let start = vol.linear_index(lo[0], y, z);
            data.extend_from_slice(&vol.data()[start..start + new_dims[0]]);
        }
    }
    let shift = lo.map(|c| c as f64);
    let affine = reindex_affine(vol.affine(), shift, [1.0; 3]);
    let volume = Volume3::new(new_dims, vol.spacing(), affine, data)
        .expect("crop of a valid volume is valid");
    CropResult { volume, offset: lo }
}

/// Affine for a grid whose voxel `j` sits at source index `origin + j * step`.
fn reindex_affine(src: &Affine, origin: [f64; 3], step: [f64; 3]) -> Affine {
    let mut out = *src;
    for r in 0..3 {
        out[r][3] = src[r][3] + (0..3).map(|c| src[r][c] * origin[c]).sum::<f64>();
        for c in 0..3 {
            out[r][c] = src[r][c] * step[c];
        }
    }
    out
}

/// Standardize to zero mean and unit population standard deviation over all
/// voxels: `(v - mean) / max(std, 1e-8)`.
pub fn zscore(vol: &Volume3) -> Volume3 {
    let data = vol.data();
    let mean = compensated_mean(data);
    let var = compensated_sum(data.iter().map(|v| (v - mean) * (v - mean))) / data.len() as f64;
    let denom = var.sqrt().max(ZSCORE_EPS);
    let out = data.iter().map(|v| (v - mean) / denom).collect();
    vol.with_data(out).expect("same geometry")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Sampling plan along one axis: output voxel `j` reads source index
/// `first + j * step`.
#[derive(Debug, Clone, Copy)]
struct AxisPlan {
    n_out: usize,
    first: f64,
    step: f64,
}

fn plan_axis(n_in: usize, spacing_in: f64, spacing_out: f64) -> AxisPlan {
    let n_out = ((n_in as f64 * spacing_in / spacing_out).round() as usize).max(1);
    if n_in > 1 && n_out > 1 {
        // First and last voxel centers coincide with the source's.
        AxisPlan {
            n_out,
            first: 0.0,
            step: (n_in - 1) as f64 / (n_out - 1) as f64,
        }
    } else {
        // Degenerate axis: center the output grid on the source grid.
        let step = spacing_out / spacing_in;
        AxisPlan {
            n_out,
            first: 0.5 * (n_in - 1) as f64 - 0.5 * (n_out - 1) as f64 * step,
            step,
        }
    }
}

/// Resample to (approximately) `target_spacing`.
///
/// Output dims are `round(dims * spacing / target)`, at least 1. Sample
/// points are aligned so the first and last voxel centers of each axis match
/// the source, positions outside the source grid are clamped to its edge,
/// and the returned spacing and affine describe the grid actually sampled.
/// When `target_spacing` equals the source spacing the input is reproduced
/// bit for bit.
pub fn resample(vol: &Volume3, target_spacing: [f64; 3], mode: Interpolation) -> Volume3 {
    assert!(
        target_spacing.iter().all(|s| s.is_finite() && *s > 0.0),
        "target spacing must be positive, got {target_spacing:?}"
    );
    let dims = vol.dims();
    let spacing = vol.spacing();
    let plans = [0, 1, 2].map(|a| plan_axis(dims[a], spacing[a], target_spacing[a]));
    let out_dims = plans.map(|p| p.n_out);

    // Per-axis (lower index, upper index, fraction) lookup tables.
    let taps: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| {
            let p = plans[a];
            let last = (dims[a] - 1) as f64;
            (0..p.n_out)
                .map(|j| {
                    let x = (p.first + j as f64 * p.step).clamp(0.0, last);
                    match mode {
                        Interpolation::Nearest => {
                            let k = x.round() as usize;
                            (k, k, 0.0)
                        }
                        Interpolation::Trilinear => {
                            let k = x.floor() as usize;
                            let frac = x - k as f64;
                            (k, (k + 1).min(dims[a] - 1), frac)
                        }
                    }
                })
                .collect()
        })
        .collect();

    let mut data = Vec::with_capacity(out_dims.iter().product());
    for &(z0, z1, fz) in &taps[2] {
        for &(y0, y1, fy) in &taps[1] {
            for &(x0, x1, fx) in &taps[0] {
                let line = |y, z| lerp(vol.get(x0, y, z), vol.get(x1, y, z), fx);
                let plane = |z| lerp(line(y0, z), line(y1, z), fy);
                data.push(lerp(plane(z0), plane(z1), fz));
            }
        }
    }

    let out_spacing = [0, 1, 2].map(|a| spacing[a] * plans[a].step);
    let affine = reindex_affine(vol.affine(), plans.map(|p| p.first), plans.map(|p| p.step));
    Volume3::new(out_dims, out_spacing, affine, data).expect("resampled volume is valid")
}

/// Linear blend that returns `a` exactly at `t = 0` and never leaves `[a, b]`.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        return a;
    }
    let v = a * (1.0 - t) + b * t;
    v.clamp(a.min(b), a.max(b))
}
