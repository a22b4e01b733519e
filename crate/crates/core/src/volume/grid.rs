use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent in voxels along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Dims { x, y, z }
    }

    pub const fn len(&self) -> usize {
        self.x * self.y * self.z
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels per z-slice.
    pub const fn slice_len(&self) -> usize {
        self.x * self.y
    }

    /// Linear index in x-fastest, then y, then z order.
    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.x * (y + self.y * z)
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.x;
        let rest = index / self.x;
        (x, rest % self.y, rest / self.y)
    }

    pub fn fits_in(&self, other: &Dims) -> bool {
        self.x <= other.x && self.y <= other.y && self.z <= other.z
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || self.z == 0 {
            return Err(Error::InvalidDims(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.x, self.y, self.z)
    }
}

impl From<[usize; 3]> for Dims {
    fn from(v: [usize; 3]) -> Self {
        Dims::new(v[0], v[1], v[2])
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

/// Physical voxel edge lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Spacing {
    sx: f64,
    sy: f64,
    sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(sx) && ok(sy) && ok(sz) {
            Ok(Spacing { sx, sy, sz })
        } else {
            Err(Error::InvalidSpacing(sx, sy, sz))
        }
    }

    pub fn isotropic() -> Self {
        Spacing {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn sx(&self) -> f64 {
        self.sx
    }

    pub fn sy(&self) -> f64 {
        self.sy
    }

    pub fn sz(&self) -> f64 {
        self.sz
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    /// Every component multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Spacing::new(self.sx * factor, self.sy * factor, self.sz * factor)
    }
}

impl TryFrom<[f64; 3]> for Spacing {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Spacing::new(v[0], v[1], v[2])
    }
}

impl From<Spacing> for [f64; 3] {
    fn from(s: Spacing) -> Self {
        s.as_array()
    }
}

/// Scalar intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: Spacing, voxels: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if voxels.len() != dims.len() {
            return Err(Error::VoxelCount {
                dims,
                actual: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVoxel(i));
        }
        Ok(Volume3D {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Volume3D::new(dims, spacing, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.dims.index(x, y, z)]
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }
}

/// Binary label grid; every voxel is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask3D {
    dims: Dims,
    spacing: Spacing,
    voxels: Vec<u8>,
}

impl Eq for Spacing {}

impl BinaryMask3D {
    pub fn new(dims: Dims, spacing: Spacing, voxels: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if voxels.len() != dims.len() {
            return Err(Error::VoxelCount {
                dims,
                actual: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryMask {
                index: i,
                value: f64::from(voxels[i]),
            });
        }
        Ok(BinaryMask3D {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        BinaryMask3D::new(dims, spacing, vec![0; dims.len()])
    }

    /// Builds a mask from a predicate over voxel coordinates.
    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        dims.validate()?;
        let mut voxels = Vec::with_capacity(dims.len());
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    voxels.push(u8::from(f(x, y, z)));
                }
            }
        }
        Ok(BinaryMask3D {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.voxels[self.dims.index(x, y, z)] != 0
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.iter().all(|&v| v == 0)
    }

    /// Voxels of slice `z`, x-fastest.
    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn slice_is_empty(&self, z: usize) -> bool {
        self.slice(z).iter().all(|&v| v == 0)
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub(crate) fn from_raw_unchecked(dims: Dims, spacing: Spacing, voxels: Vec<u8>) -> Self {
        debug_assert_eq!(voxels.len(), dims.len());
        debug_assert!(voxels.iter().all(|&v| v <= 1));
        BinaryMask3D {
            dims,
            spacing,
            voxels,
        }
    }

    pub fn into_voxels(self) -> Vec<u8> {
        self.voxels
    }

    pub(crate) fn check_same_dims(&self, other: &BinaryMask3D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}
