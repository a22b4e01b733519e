//! Overlap and surface-distance metrics.
//!
//! Surface distances are measured between centers of boundary voxels, in
//! millimetres. A 3D boundary voxel is a foreground voxel with at least one
//! background 6-neighbour; a 2D boundary pixel is a foreground pixel with at
//! least one background 4-neighbour in its slice. Outside the grid counts as
//! background. Both use exact Euclidean distance transforms.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{BinaryMask3D, Dims, Spacing};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hausdorff_mm: Option<f64>,
    /// `None` when no slice has both masks non-empty.
    pub assd2d_mm: Option<f64>,
}

pub fn evaluate(pred: &BinaryMask3D, gt: &BinaryMask3D) -> Result<MetricReport> {
    Ok(MetricReport {
        dice: dice_score(pred, gt)?,
        hausdorff_mm: hausdorff_mm(pred, gt, gt.spacing())?,
        assd2d_mm: assd2d_mm(pred, gt, gt.spacing())?,
    })
}

/// `2|a & b| / (|a| + |b|)`, and 1 when both are empty.
pub fn dice_score(a: &BinaryMask3D, b: &BinaryMask3D) -> Result<f64> {
    a.check_same_dims(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.voxels().iter().zip(b.voxels()) {
        inter += usize::from(x & y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Boundary flags of a mask under 6-connectivity.
pub fn boundary_3d(m: &BinaryMask3D) -> Vec<bool> {
    let d = m.dims();
    let v = m.voxels();
    let mut out = vec![false; d.len()];
    for z in 0..d.z {
        for y in 0..d.y {
            for x in 0..d.x {
                let i = d.index(x, y, z);
                if v[i] == 0 {
                    continue;
                }
                out[i] = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == d.x
                    || y + 1 == d.y
                    || z + 1 == d.z
                    || v[i - 1] == 0
                    || v[i + 1] == 0
                    || v[i - d.x] == 0
                    || v[i + d.x] == 0
                    || v[i - d.slice_len()] == 0
                    || v[i + d.slice_len()] == 0;
            }
        }
    }
    out
}

/// Boundary flags of one slice under 4-connectivity.
pub fn boundary_2d(slice: &[u8], nx: usize, ny: usize) -> Vec<bool> {
    let mut out = vec![false; slice.len()];
    for y in 0..ny {
        for x in 0..nx {
            let i = x + nx * y;
            if slice[i] == 0 {
                continue;
            }
            out[i] = x == 0
                || y == 0
                || x + 1 == nx
                || y + 1 == ny
                || slice[i - 1] == 0
                || slice[i + 1] == 0
                || slice[i - nx] == 0
                || slice[i + nx] == 0;
        }
    }
    out
}

/// Exact 1D squared distance transform (lower envelope of parabolas) over
/// samples at positions `k * spacing`.
fn edt_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let pos = |q: usize| q as f64 * spacing;
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.fill(f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            // z[0] is -inf, so this never pops the first parabola
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let p = v[k];
        let dq = pos(q) - pos(p);
        out[q] = dq * dq + f[p];
    }
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest set voxel.
fn squared_edt(features: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut g: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut zb = vec![0.0; longest + 1];
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        let (a_len, b_len, a_stride, b_stride) = match axis {
            0 => (ny, nz, nx, nx * ny),
            1 => (nx, nz, 1, nx * ny),
            _ => (nx, ny, 1, nx),
        };
        for b in 0..b_len {
            for a in 0..a_len {
                let base = a * a_stride + b * b_stride;
                for k in 0..n {
                    line[k] = g[base + k * stride];
                }
                edt_1d(&line[..n], spacing[axis], &mut out[..n], &mut v, &mut zb);
                for k in 0..n {
                    g[base + k * stride] = out[k];
                }
            }
        }
    }
    g
}

fn directed_max(from: &[bool], to_sq_dist: &[f64]) -> f64 {
    from.iter()
        .zip(to_sq_dist)
        .filter(|(&f, _)| f)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance between boundary voxel sets, in mm.
pub fn hausdorff_mm(a: &BinaryMask3D, b: &BinaryMask3D, spacing: Spacing) -> Result<Option<f64>> {
    a.check_same_dims(b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let dims = a.dims().as_array();
    let s = spacing.as_array();
    let ba = boundary_3d(a);
    let bb = boundary_3d(b);
    let da = squared_edt(&ba, dims, s);
    let db = squared_edt(&bb, dims, s);
    Ok(Some(directed_max(&ba, &db).max(directed_max(&bb, &da))))
}

fn slice_assd(a: &[u8], b: &[u8], d: Dims, spacing: Spacing) -> f64 {
    let dims = [d.x, d.y, 1];
    let s = [spacing.sx(), spacing.sy(), 1.0];
    let ba = boundary_2d(a, d.x, d.y);
    let bb = boundary_2d(b, d.x, d.y);
    let da = squared_edt(&ba, dims, s);
    let db = squared_edt(&bb, dims, s);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..ba.len() {
        if ba[i] {
            total += db[i].sqrt();
            count += 1;
        }
    }
    for i in 0..bb.len() {
        if bb[i] {
            total += da[i].sqrt();
            count += 1;
        }
    }
    total / count as f64
}

/// Mean over slices where both masks are non-empty of the in-plane average
/// symmetric surface distance, in mm.
pub fn assd2d_mm(a: &BinaryMask3D, b: &BinaryMask3D, spacing: Spacing) -> Result<Option<f64>> {
    a.check_same_dims(b)?;
    let d = a.dims();
    let mut sum = 0.0;
    let mut slices = 0usize;
    for z in 0..d.z {
        if a.slice_is_empty(z) || b.slice_is_empty(z) {
            continue;
        }
        sum += slice_assd(a.slice(z), b.slice(z), d, spacing);
        slices += 1;
    }
    Ok((slices > 0).then(|| sum / slices as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(d: Dims, s: Spacing, f: impl FnMut(usize, usize, usize) -> bool) -> BinaryMask3D {
        BinaryMask3D::from_fn(d, s, f).unwrap()
    }

    #[test]
    fn dice_cases() {
        let d = Dims::new(4, 1, 1);
        let s = Spacing::isotropic();
        let a = mask(d, s, |x, _, _| x < 2);
        let b = mask(d, s, |x, _, _| x == 0);
        let c = mask(d, s, |x, _, _| x == 3);
        let e = mask(d, s, |_, _, _| false);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_score(&b, &c).unwrap(), 0.0);
        assert!((dice_score(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_score(&e, &e).unwrap(), 1.0);
        let other = mask(Dims::new(2, 2, 1), s, |_, _, _| true);
        assert!(dice_score(&a, &other).is_err());
    }

    #[test]
    fn single_voxels_three_slices_apart() {
        let d = Dims::new(3, 3, 8);
        let s = Spacing::new(1.0, 1.0, 2.0).unwrap();
        let a = mask(d, s, |x, y, z| (x, y, z) == (1, 1, 2));
        let b = mask(d, s, |x, y, z| (x, y, z) == (1, 1, 5));
        assert_eq!(hausdorff_mm(&a, &b, s).unwrap(), Some(6.0));
        assert_eq!(hausdorff_mm(&a, &a, s).unwrap(), Some(0.0));
    }

    #[test]
    fn empty_masks_are_undefined() {
        let d = Dims::new(3, 3, 3);
        let s = Spacing::isotropic();
        let a = mask(d, s, |x, _, _| x == 1);
        let e = mask(d, s, |_, _, _| false);
        assert_eq!(hausdorff_mm(&a, &e, s).unwrap(), None);
        assert_eq!(assd2d_mm(&a, &e, s).unwrap(), None);
    }

    #[test]
    fn assd_identity_and_one_sided_slices() {
        let d = Dims::new(8, 8, 3);
        let s = Spacing::new(1.5, 1.5, 3.0).unwrap();
        let a = mask(d, s, |x, y, z| z < 2 && (2..6).contains(&x) && (2..6).contains(&y));
        assert_eq!(assd2d_mm(&a, &a, s).unwrap(), Some(0.0));
        // b also covers slice 2, which a does not: that slice is skipped
        let b = mask(d, s, |x, y, _| (2..6).contains(&x) && (2..6).contains(&y));
        assert_eq!(assd2d_mm(&a, &b, s).unwrap(), Some(0.0));
    }

    #[test]
    fn concentric_squares() {
        // outer 6x6 square, inner 4x4 square (1-pixel margin), spacing 1.5
        let d = Dims::new(10, 10, 2);
        let s = Spacing::new(1.5, 1.5, 3.0).unwrap();
        let outer = mask(d, s, |x, y, _| (2..8).contains(&x) && (2..8).contains(&y));
        let inner = mask(d, s, |x, y, _| (3..7).contains(&x) && (3..7).contains(&y));
        // inner boundary: 12 pixels, each 1 pixel (1.5 mm) from the outer ring
        // outer boundary: 20 pixels; 16 edge pixels at 1.5 mm, 4 corners at 1.5*sqrt(2)
        let expect = (12.0 * 1.5 + 16.0 * 1.5 + 4.0 * 1.5 * 2f64.sqrt()) / 32.0;
        let got = assd2d_mm(&outer, &inner, s).unwrap().unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn edt_1d_matches_brute_force() {
        let f = [f64::INFINITY, 0.0, f64::INFINITY, f64::INFINITY, 0.0, f64::INFINITY];
        let mut out = [0.0; 6];
        let mut v = [0usize; 6];
        let mut z = [0.0; 7];
        edt_1d(&f, 2.0, &mut out, &mut v, &mut z);
        assert_eq!(out, [4.0, 0.0, 4.0, 4.0, 0.0, 4.0]);
    }
}
