use thiserror::Error;

/// Row-major 4x4 voxel-index to world (mm) transform.
pub type Affine = [[f64; 4]; 4];

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must all be >= 1, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing must be finite and > 0, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("affine last row must be (0, 0, 0, 1), got {0:?}")]
    BadAffine([f64; 4]),
    #[error("data holds {actual} voxels, dims require {expected}")]
    DataLength { expected: usize, actual: usize },
}

/// A 3-D scalar grid with voxel spacing and a voxel-to-world affine.
///
/// Data is stored x-fastest, then y, then z. Instances are immutable once
/// built; every constructor checks the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
    data: Vec<f64>,
}

pub fn diagonal_affine(spacing: [f64; 3]) -> Affine {
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

impl Volume3 {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        affine: Affine,
        data: Vec<f64>,
    ) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::BadDims(dims));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        if affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(VolumeError::BadAffine(affine[3]));
        }
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(VolumeError::BadDims(dims))?;
        if data.len() != expected {
            return Err(VolumeError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            affine,
            data,
        })
    }

    /// Volume whose affine is `diag(spacing)` with the origin at voxel 0.
    pub fn with_spacing(
        dims: [usize; 3],
        spacing: [f64; 3],
        data: Vec<f64>,
    ) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, diagonal_affine(spacing), data)
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64) -> Result<Self, VolumeError> {
        let n = dims.iter().product();
        Self::with_spacing(dims, spacing, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.linear_index(x, y, z)]
    }

    /// Same geometry, new voxel values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(self.dims, self.spacing, self.affine, data)
    }

    /// World position (mm) of a continuous voxel coordinate.
    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3];
        }
        out
    }
}
