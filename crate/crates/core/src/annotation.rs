//! Algorithm-guided partial delineation: the structure extent from its
//! first and last non-empty slices, a consecutive window of annotated slices
//! sized by a percentage of that extent, and border slices outside the
//! extent that are known to be empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3D, Dims, Rng, Spacing};

/// First and last non-empty z-slices of a structure, inclusive.
///
/// Interior empty slices are allowed; the extent always spans first to last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureExtent {
    pub z_min: usize,
    pub z_max: usize,
}

impl StructureExtent {
    pub fn len(&self) -> usize {
        self.z_max - self.z_min + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, z: usize) -> bool {
        (self.z_min..=self.z_max).contains(&z)
    }
}

/// First and last non-empty slice. Gaps in between are not an error: they
/// fall inside the extent and are treated like any other slice there.
pub fn compute_extent(gt: &BinaryMask3D) -> Result<StructureExtent> {
    let depth = gt.dims().z;
    let z_min = (0..depth)
        .find(|&z| !gt.slice_is_empty(z))
        .ok_or(Error::EmptyMask)?;
    let z_max = (0..depth).rev().find(|&z| !gt.slice_is_empty(z)).unwrap_or(z_min);
    Ok(StructureExtent { z_min, z_max })
}

/// Which slices of a volume get delineated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPlan {
    pub extent: StructureExtent,
    pub depth: usize,
    /// Inclusive slice range inside the extent.
    pub window: (usize, usize),
    pub percentage: f64,
}

impl AnnotationPlan {
    pub fn window_len(&self) -> usize {
        self.window.1 - self.window.0 + 1
    }

    pub fn in_window(&self, z: usize) -> bool {
        (self.window.0..=self.window.1).contains(&z)
    }

    pub fn is_border(&self, z: usize) -> bool {
        z < self.depth && !self.extent.contains(z)
    }

    pub fn border_slices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.depth).filter(|&z| self.is_border(z))
    }
}

/// Number of window slices for an extent of `n` slices at percentage `p`.
pub fn window_size(n: usize, p: f64) -> usize {
    // f64::round rounds half away from zero
    ((p * n as f64).round() as usize).clamp(1, n)
}

/// Draws the window center uniformly within the extent, centres a window of
/// `window_size` slices on it and shifts it minimally to stay in the extent.
pub fn plan_annotation(
    extent: StructureExtent,
    depth: usize,
    p: f64,
    rng: &mut Rng,
) -> Result<AnnotationPlan> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidPercentage(p));
    }
    if extent.z_min > extent.z_max || extent.z_max >= depth {
        return Err(Error::InvalidConfig(format!(
            "extent ({}, {}) invalid for depth {depth}",
            extent.z_min, extent.z_max
        )));
    }
    let center = rng.next_int(extent.z_min as i64, extent.z_max as i64)? as usize;
    Ok(place_window(extent, depth, p, center))
}

/// Window placement around a given center slice.
pub fn place_window(extent: StructureExtent, depth: usize, p: f64, center: usize) -> AnnotationPlan {
    let k = window_size(extent.len(), p) as i64;
    let c = center as i64;
    let mut lo = c - (k - 1) / 2;
    let mut hi = c + k / 2;
    let (zmin, zmax) = (extent.z_min as i64, extent.z_max as i64);
    if lo < zmin {
        hi += zmin - lo;
        lo = zmin;
    }
    if hi > zmax {
        lo -= hi - zmax;
        hi = zmax;
    }
    AnnotationPlan {
        extent,
        depth,
        window: (lo as usize, hi as usize),
        percentage: p,
    }
}

/// Delineated slices count; border slices are two clicks, not delineation.
pub fn annotation_cost(plan: &AnnotationPlan) -> usize {
    plan.window_len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceStatus {
    Window,
    Border,
    Unannotated,
}

impl SliceStatus {
    pub fn is_annotated(self) -> bool {
        !matches!(self, SliceStatus::Unannotated)
    }
}

/// Labels known only on annotated slices.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLabel {
    dims: Dims,
    spacing: Spacing,
    status: Vec<SliceStatus>,
    /// Zero on every slice that is not a window slice.
    labels: Vec<u8>,
}

impl PartialLabel {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn status(&self, z: usize) -> SliceStatus {
        self.status[z]
    }

    pub fn statuses(&self) -> &[SliceStatus] {
        &self.status
    }

    /// Label of a voxel, `None` on unannotated slices.
    pub fn label(&self, x: usize, y: usize, z: usize) -> Option<u8> {
        self.status[z]
            .is_annotated()
            .then(|| self.labels[self.dims.index(x, y, z)])
    }

    /// Dense labels; zero-filled where unannotated.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn annotated_slices(&self) -> usize {
        self.status.iter().filter(|s| s.is_annotated()).count()
    }

    /// The same label with border slices demoted to unannotated.
    pub fn without_borders(mut self) -> Self {
        for s in &mut self.status {
            if *s == SliceStatus::Border {
                *s = SliceStatus::Unannotated;
            }
        }
        self
    }
}

pub fn build_partial_label(gt: &BinaryMask3D, plan: &AnnotationPlan) -> Result<PartialLabel> {
    let dims = gt.dims();
    if plan.depth != dims.z || plan.extent.z_max >= dims.z {
        return Err(Error::InvalidConfig(format!(
            "plan depth {} does not match mask {dims}",
            plan.depth
        )));
    }
    let n = dims.slice_len();
    let mut labels = vec![0u8; dims.len()];
    let mut status = Vec::with_capacity(dims.z);
    for z in 0..dims.z {
        let s = if plan.in_window(z) {
            labels[z * n..(z + 1) * n].copy_from_slice(gt.slice(z));
            SliceStatus::Window
        } else if plan.is_border(z) {
            SliceStatus::Border
        } else {
            SliceStatus::Unannotated
        };
        status.push(s);
    }
    Ok(PartialLabel {
        dims,
        spacing: gt.spacing(),
        status,
        labels,
    })
}
