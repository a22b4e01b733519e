//! Hole filling and main-component extraction.
//!
//! Foreground uses 26-connectivity and background 6-connectivity.

use std::collections::VecDeque;

use crate::volume::{BinaryMask3D, Dims};

const N6: [(isize, isize, isize); 6] = [
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
];

fn neighbors26() -> Vec<(isize, isize, isize)> {
    let mut n = Vec::with_capacity(26);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    n.push((dx, dy, dz));
                }
            }
        }
    }
    n
}

#[inline]
fn step(d: Dims, i: usize, (dx, dy, dz): (isize, isize, isize)) -> Option<usize> {
    let (x, y, z) = d.coords(i);
    let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
    if nx < 0 || ny < 0 || nz < 0 || nx >= d.x as isize || ny >= d.y as isize || nz >= d.z as isize {
        return None;
    }
    Some(d.index(nx as usize, ny as usize, nz as usize))
}

/// Turns background regions that cannot reach the volume border into foreground.
pub fn fill_holes(mask: &BinaryMask3D) -> BinaryMask3D {
    let d = mask.dims();
    let v = mask.voxels();
    let mut outside = vec![false; d.len()];
    let mut queue = VecDeque::new();
    for i in 0..d.len() {
        let (x, y, z) = d.coords(i);
        let on_border =
            x == 0 || y == 0 || z == 0 || x + 1 == d.x || y + 1 == d.y || z + 1 == d.z;
        if on_border && v[i] == 0 {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &o in &N6 {
            if let Some(j) = step(d, i, o) {
                if v[j] == 0 && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let filled = outside.iter().map(|&o| u8::from(!o)).collect();
    BinaryMask3D::from_raw_unchecked(d, mask.spacing(), filled)
}

/// Component labels (1-based, in order of first voxel) and per-label sizes.
pub fn label_components(mask: &BinaryMask3D) -> (Vec<u32>, Vec<usize>) {
    let d = mask.dims();
    let v = mask.voxels();
    let n26 = neighbors26();
    let mut labels = vec![0u32; d.len()];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for seed in 0..d.len() {
        if v[seed] == 0 || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        sizes.push(0);
        labels[seed] = label;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            sizes[label as usize] += 1;
            for &o in &n26 {
                if let Some(j) = step(d, i, o) {
                    if v[j] == 1 && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (labels, sizes)
}

/// Keeps the largest 26-connected component; equal sizes resolve to the
/// component containing the smallest linear voxel index.
pub fn largest_component(mask: &BinaryMask3D) -> BinaryMask3D {
    let (labels, sizes) = label_components(mask);
    let mut best = 0usize;
    for (label, &size) in sizes.iter().enumerate().skip(1) {
        // labels are numbered by first voxel, so strict > keeps the earliest on ties
        if best == 0 || size > sizes[best] {
            best = label;
        }
    }
    let out = labels
        .iter()
        .map(|&l| u8::from(best != 0 && l as usize == best))
        .collect();
    BinaryMask3D::from_raw_unchecked(mask.dims(), mask.spacing(), out)
}

/// Hole filling followed by main-component extraction.
pub fn postprocess(mask: &BinaryMask3D) -> BinaryMask3D {
    largest_component(&fill_holes(mask))
}
