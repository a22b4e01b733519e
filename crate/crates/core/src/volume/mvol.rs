//! MVOL: one line of JSON header followed by a raw little-endian voxel
//! payload in x-fastest order.
//!
//! ```text
//! {"dims":[X,Y,Z],"spacing":[sx,sy,sz],"dtype":"f32"}\n
//! <X*Y*Z * 4 bytes>            (dtype "u8": 1 byte per voxel)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinaryMask3D, Dims, Spacing, Volume3D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
}

/// Either grid kind, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Volume(Volume3D),
    Mask(BinaryMask3D),
}

impl Grid {
    pub fn dims(&self) -> Dims {
        match self {
            Grid::Volume(v) => v.dims(),
            Grid::Mask(m) => m.dims(),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Grid::Volume(_) => Dtype::F32,
            Grid::Mask(_) => Dtype::U8,
        }
    }
}

impl From<Volume3D> for Grid {
    fn from(v: Volume3D) -> Self {
        Grid::Volume(v)
    }
}

impl From<BinaryMask3D> for Grid {
    fn from(m: BinaryMask3D) -> Self {
        Grid::Mask(m)
    }
}

fn header_line(dims: Dims, spacing: Spacing, dtype: Dtype) -> Vec<u8> {
    let header = Header {
        dims: dims.as_array(),
        spacing: spacing.as_array(),
        dtype,
    };
    let mut line = serde_json::to_vec(&header).expect("header serializes");
    line.push(b'\n');
    line
}

/// Serializes a volume to MVOL bytes (dtype f32).
pub fn encode_volume(vol: &Volume3D) -> Vec<u8> {
    let mut out = header_line(vol.dims(), vol.spacing(), Dtype::F32);
    out.reserve(vol.voxels().len() * 4);
    for v in vol.voxels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serializes a mask to MVOL bytes (dtype u8).
pub fn encode_mask(mask: &BinaryMask3D) -> Vec<u8> {
    let mut out = header_line(mask.dims(), mask.spacing(), Dtype::U8);
    out.extend_from_slice(mask.voxels());
    out
}

pub fn encode(grid: &Grid) -> Vec<u8> {
    match grid {
        Grid::Volume(v) => encode_volume(v),
        Grid::Mask(m) => encode_mask(m),
    }
}

/// Parses MVOL bytes into whichever grid kind the header declares.
pub fn decode(bytes: &[u8]) -> Result<Grid> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing newline after header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let dims = Dims::from(header.dims);
    dims.validate()
        .map_err(|_| Error::MalformedHeader(format!("dims {dims} must be positive")))?;
    let spacing = Spacing::try_from(header.spacing)?;
    let payload = &bytes[nl + 1..];
    let expected = dims
        .x
        .checked_mul(dims.y)
        .and_then(|v| v.checked_mul(dims.z))
        .and_then(|v| v.checked_mul(header.dtype.bytes_per_voxel()))
        .ok_or_else(|| Error::MalformedHeader("dims overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    match header.dtype {
        Dtype::F32 => {
            let voxels = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(Grid::Volume(Volume3D::new(dims, spacing, voxels)?))
        }
        Dtype::U8 => Ok(Grid::Mask(BinaryMask3D::new(
            dims,
            spacing,
            payload.to_vec(),
        )?)),
    }
}

pub fn read_mvol(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_mvol(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

/// Reads a file as intensities; u8 masks are widened to f32.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    match read_mvol(path)? {
        Grid::Volume(v) => Ok(v),
        Grid::Mask(m) => {
            let (dims, spacing) = (m.dims(), m.spacing());
            let voxels = m.into_voxels().into_iter().map(f32::from).collect();
            Volume3D::new(dims, spacing, voxels)
        }
    }
}

/// Reads a file as a mask; f32 payloads must contain only 0.0 and 1.0.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask3D> {
    match read_mvol(path)? {
        Grid::Mask(m) => Ok(m),
        Grid::Volume(v) => {
            let (dims, spacing) = (v.dims(), v.spacing());
            let mut voxels = Vec::with_capacity(dims.len());
            for (index, &value) in v.voxels().iter().enumerate() {
                match value {
                    x if x == 0.0 => voxels.push(0),
                    x if x == 1.0 => voxels.push(1),
                    _ => {
                        return Err(Error::NonBinaryMask {
                            index,
                            value: f64::from(value),
                        })
                    }
                }
            }
            BinaryMask3D::new(dims, spacing, voxels)
        }
    }
}
