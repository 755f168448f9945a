//! Single-file NIfTI-1 (`.nii`, optionally gzip-compressed) reading and writing.
//!
//! Only the 348-byte NIfTI-1 header with magic `n+1\0` is accepted. Both byte
//! orders are read; files are always written little-endian with float32
//! voxels and the affine stored in the sform rows. Extension blocks are
//! skipped by honouring `vox_offset`.

use std::io::Read;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

pub use crate::volume::{diagonal_affine, Affine, Volume3, VolumeError};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag that precedes voxel data.
pub const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("not a single-file NIfTI-1 payload")]
    BadMagic,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated data: need {expected} bytes, have {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("invalid header field: {0}")]
    InvalidHeader(String),
    #[error("gzip decompression failed: {0}")]
    Gzip(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl HeaderReader<'_> {
    fn array<const N: usize>(&self, offset: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[offset..offset + N]);
        out
    }

    fn i16(&self, offset: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.array(offset)),
            Endian::Big => i16::from_be_bytes(self.array(offset)),
        }
    }

    fn i32(&self, offset: usize) -> i32 {
        match self.endian {
            Endian::Little => i32::from_le_bytes(self.array(offset)),
            Endian::Big => i32::from_be_bytes(self.array(offset)),
        }
    }

    fn f32(&self, offset: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.array(offset)),
            Endian::Big => f32::from_be_bytes(self.array(offset)),
        }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Parse a NIfTI-1 volume. Voxel values are converted to `f64` and the
/// `scl_slope`/`scl_inter` scaling is applied when the slope is non-zero.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume3, NiftiError> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        MultiGzDecoder::new(bytes).read_to_end(&mut raw)?;
        return parse(&raw);
    }
    parse(bytes)
}

fn parse(bytes: &[u8]) -> Result<Volume3, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TruncatedData {
            expected: HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    let size_field = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let endian = if i32::from_le_bytes(size_field) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(size_field) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(NiftiError::BadMagic);
    };
    if &bytes[344..348] != MAGIC {
        return Err(NiftiError::BadMagic);
    }
    let h = HeaderReader { bytes, endian };

    let dim: [i16; 8] = std::array::from_fn(|i| h.i16(40 + 2 * i));
    if !(3..=4).contains(&dim[0]) {
        return Err(NiftiError::BadDims(format!("dim[0] = {}", dim[0])));
    }
    if dim[0] == 4 && dim[4] != 1 {
        return Err(NiftiError::BadDims(format!(
            "dim[4] = {}, only a single volume is supported",
            dim[4]
        )));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(NiftiError::BadDims(format!(
            "spatial dims {:?}",
            &dim[1..4]
        )));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = h.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 => 4,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };

    let pixdim: [f32; 8] = std::array::from_fn(|i| h.f32(76 + 4 * i));
    let spacing = [1, 2, 3].map(|i| f64::from(pixdim[i]).abs());
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(NiftiError::InvalidHeader(format!(
            "pixdim[1..4] = {:?}",
            &pixdim[1..4]
        )));
    }

    let vox_offset = h.f32(108);
    if !vox_offset.is_finite() || vox_offset < 0.0 || vox_offset > u32::MAX as f32 {
        return Err(NiftiError::InvalidHeader(format!(
            "vox_offset = {vox_offset}"
        )));
    }
    // Some writers leave vox_offset at 0 for single files; data can never
    // start before the extension flag.
    let data_start = (vox_offset as usize).max(DATA_OFFSET);

    let n_voxels = dims.iter().product::<usize>();
    let expected = n_voxels
        .checked_mul(width)
        .and_then(|n| n.checked_add(data_start))
        .ok_or_else(|| NiftiError::BadDims(format!("{dims:?} overflows")))?;
    if bytes.len() < expected {
        return Err(NiftiError::TruncatedData {
            expected,
            actual: bytes.len(),
        });
    }

    let slope = f64::from(h.f32(112));
    let inter = f64::from(h.f32(116));
    let scale = slope != 0.0 && slope.is_finite() && inter.is_finite();

    let payload = &bytes[data_start..expected];
    let raw = HeaderReader {
        bytes: payload,
        endian,
    };
    let mut data: Vec<f64> = (0..n_voxels)
        .map(|i| {
            let o = i * width;
            match datatype {
                DT_UINT8 => f64::from(payload[o]),
                DT_INT16 => f64::from(raw.i16(o)),
                DT_INT32 => f64::from(raw.i32(o)),
                DT_FLOAT32 => f64::from(raw.f32(o)),
                _ => {
                    let b: [u8; 8] = raw.array(o);
                    match endian {
                        Endian::Little => f64::from_le_bytes(b),
                        Endian::Big => f64::from_be_bytes(b),
                    }
                }
            }
        })
        .collect();
    if scale {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let affine = if h.i16(254) > 0 {
        sform_affine(&h)?
    } else if h.i16(252) > 0 {
        qform_affine(&h, &pixdim)?
    } else {
        diagonal_affine(spacing)
    };

    Ok(Volume3::new(dims, spacing, affine, data)?)
}

fn sform_affine(h: &HeaderReader<'_>) -> Result<Affine, NiftiError> {
    let mut affine = diagonal_affine([1.0; 3]);
    for (r, row) in affine.iter_mut().take(3).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = f64::from(h.f32(280 + 16 * r + 4 * c));
        }
    }
    check_finite(&affine, "sform")?;
    Ok(affine)
}

/// Affine from the quaternion representation (`quatern_b/c/d`, `qoffset`,
/// `qfac = pixdim[0]`).
fn qform_affine(h: &HeaderReader<'_>, pixdim: &[f32; 8]) -> Result<Affine, NiftiError> {
    let b = f64::from(h.f32(256));
    let c = f64::from(h.f32(260));
    let d = f64::from(h.f32(264));
    let offset = [268, 272, 276].map(|o| f64::from(h.f32(o)));
    let mut a = 1.0 - (b * b + c * c + d * d);
    let (b, c, d) = if a < 1e-7 {
        // Numerically a 180 degree rotation: renormalise (b, c, d).
        let n = (b * b + c * c + d * d).sqrt();
        a = 0.0;
        if n > 0.0 {
            (b / n, c / n, d / n)
        } else {
            (b, c, d)
        }
    } else {
        a = a.sqrt();
        (b, c, d)
    };
    let rot = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ];
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let scale = [
        f64::from(pixdim[1]).abs(),
        f64::from(pixdim[2]).abs(),
        f64::from(pixdim[3]).abs() * qfac,
    ];
    let mut affine = diagonal_affine([1.0; 3]);
    for r in 0..3 {
        for k in 0..3 {
            affine[r][k] = rot[r][k] * scale[k];
        }
        affine[r][3] = offset[r];
    }
    check_finite(&affine, "qform")?;
    Ok(affine)
}

fn check_finite(affine: &Affine, what: &str) -> Result<(), NiftiError> {
    if affine.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NiftiError::InvalidHeader(format!("non-finite {what}")))
    }
}

/// Serialize as uncompressed little-endian NIfTI-1 with float32 voxels.
///
/// The affine goes to the sform rows (`sform_code = 1`); `qform_code` is 0.
/// Fails only if a dimension does not fit the header's 16-bit fields.
pub fn write_nifti(vol: &Volume3) -> Result<Vec<u8>, NiftiError> {
    let dims = vol.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::BadDims(format!(
            "{dims:?} exceed the NIfTI-1 limit of 32767"
        )));
    }
    let mut out = vec![0u8; DATA_OFFSET + 4 * vol.len()];
    {
        let mut put = |offset: usize, bytes: &[u8]| {
            out[offset..offset + bytes.len()].copy_from_slice(bytes);
        };
        put(0, &(HEADER_SIZE as i32).to_le_bytes());
        put(38, b"r");
        let dim: [i16; 8] = [
            3,
            dims[0] as i16,
            dims[1] as i16,
            dims[2] as i16,
            1,
            1,
            1,
            1,
        ];
        for (i, d) in dim.iter().enumerate() {
            put(40 + 2 * i, &d.to_le_bytes());
        }
        put(70, &DT_FLOAT32.to_le_bytes());
        put(72, &32i16.to_le_bytes());
        let spacing = vol.spacing();
        let pixdim: [f32; 8] = [
            1.0,
            spacing[0] as f32,
            spacing[1] as f32,
            spacing[2] as f32,
            1.0,
            1.0,
            1.0,
            1.0,
        ];
        for (i, p) in pixdim.iter().enumerate() {
            put(76 + 4 * i, &p.to_le_bytes());
        }
        put(108, &(DATA_OFFSET as f32).to_le_bytes());
        put(112, &1.0f32.to_le_bytes());
        put(116, &0.0f32.to_le_bytes());
        // xyzt_units: millimetres
        put(123, &[2]);
        put(252, &0i16.to_le_bytes());
        put(254, &1i16.to_le_bytes());
        let affine = vol.affine();
        for (r, row) in affine.iter().take(3).enumerate() {
            for (c, v) in row.iter().enumerate() {
                put(280 + 16 * r + 4 * c, &(*v as f32).to_le_bytes());
            }
        }
        put(344, MAGIC);
    }
    for (i, v) in vol.data().iter().enumerate() {
        let o = DATA_OFFSET + 4 * i;
        out[o..o + 4].copy_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}
