//! Training blocks from partially annotated volumes and minibatch assembly.

use crate::annotation::{PartialLabel, SliceStatus};
use crate::error::{Error, Result};
use crate::volume::{Dims, Rng, Volume3D};

/// One training block.
///
/// The selection block doubles as the network's annotation-mask input
/// channel, so the two can never disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    dims: Dims,
    origin: (usize, usize, usize),
    image: Vec<f32>,
    target: Vec<u8>,
    selection: Vec<u8>,
}

impl Patch {
    pub fn new(dims: Dims, image: Vec<f32>, target: Vec<u8>, selection: Vec<u8>) -> Result<Self> {
        let n = dims.len();
        for len in [image.len(), target.len(), selection.len()] {
            if len != n {
                return Err(Error::LengthMismatch(len, n));
            }
        }
        if selection.iter().chain(&target).any(|&v| v > 1) {
            return Err(Error::InvalidConfig("target/selection must be 0 or 1".into()));
        }
        if !selection.contains(&1) {
            return Err(Error::EmptySelection);
        }
        Ok(Patch {
            dims,
            origin: (0, 0, 0),
            image,
            target,
            selection,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Position of the block's first voxel in its source volume.
    pub fn origin(&self) -> (usize, usize, usize) {
        self.origin
    }

    pub fn image(&self) -> &[f32] {
        &self.image
    }

    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn selection(&self) -> &[u8] {
        &self.selection
    }

    pub fn mask_channel(&self) -> &[u8] {
        &self.selection
    }

    pub fn selected_count(&self) -> usize {
        self.selection.iter().map(|&v| v as usize).sum()
    }

    fn flip_axis(&mut self, axis: usize) {
        let d = self.dims;
        let flip = |buf: &mut Vec<_>| flip_in_place(buf, d, axis);
        flip(&mut self.target);
        flip(&mut self.selection);
        flip_in_place(&mut self.image, d, axis);
    }

    /// Mirror along x.
    pub fn flip_x(&mut self) {
        self.flip_axis(0);
    }

    /// Mirror along y.
    pub fn flip_y(&mut self) {
        self.flip_axis(1);
    }
}

fn flip_in_place<T>(buf: &mut [T], d: Dims, axis: usize) {
    for z in 0..d.z {
        for y in 0..d.y {
            match axis {
                0 => {
                    let row = d.index(0, y, z);
                    buf[row..row + d.x].reverse();
                }
                _ => {
                    if y >= d.y / 2 {
                        continue;
                    }
                    let yy = d.y - 1 - y;
                    for x in 0..d.x {
                        buf.swap(d.index(x, y, z), d.index(x, yy, z));
                    }
                }
            }
        }
    }
}

/// Block start positions along one axis: every `stride` voxels, plus a final
/// block flush with the far boundary.
pub fn block_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().expect("non-empty") != last {
        starts.push(last);
    }
    starts
}

/// Cuts sliding-window blocks and keeps those with at least one annotated
/// slice (window or border).
pub fn extract_blocks(
    img: &Volume3D,
    plab: &PartialLabel,
    patch: Dims,
    stride: Dims,
) -> Result<Vec<Patch>> {
    let vd = img.dims();
    if vd != plab.dims() {
        return Err(Error::DimsMismatch(vd, plab.dims()));
    }
    if !patch.fits_in(&vd) || patch.is_empty() {
        return Err(Error::PatchTooLarge { patch, volume: vd });
    }
    if stride.x == 0 || stride.y == 0 || stride.z == 0 {
        return Err(Error::InvalidStride(stride));
    }
    let mut blocks = Vec::new();
    for &z0 in &block_starts(vd.z, patch.z, stride.z) {
        let statuses = &plab.statuses()[z0..z0 + patch.z];
        if !statuses.iter().any(|s| s.is_annotated()) {
            continue;
        }
        for &y0 in &block_starts(vd.y, patch.y, stride.y) {
            for &x0 in &block_starts(vd.x, patch.x, stride.x) {
                let mut image = Vec::with_capacity(patch.len());
                let mut target = Vec::with_capacity(patch.len());
                let mut selection = Vec::with_capacity(patch.len());
                for (dz, status) in statuses.iter().enumerate() {
                    let sel = u8::from(status.is_annotated());
                    let window = *status == SliceStatus::Window;
                    for dy in 0..patch.y {
                        let src = vd.index(x0, y0 + dy, z0 + dz);
                        image.extend_from_slice(&img.voxels()[src..src + patch.x]);
                        if window {
                            target.extend_from_slice(&plab.labels()[src..src + patch.x]);
                        } else {
                            target.extend(std::iter::repeat_n(0, patch.x));
                        }
                        selection.extend(std::iter::repeat_n(sel, patch.x));
                    }
                }
                let mut p = Patch::new(patch, image, target, selection)?;
                p.origin = (x0, y0, z0);
                blocks.push(p);
            }
        }
    }
    Ok(blocks)
}

/// A minibatch of equally sized patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    patches: Vec<Patch>,
}

impl Batch {
    pub fn new(patches: Vec<Patch>) -> Result<Self> {
        let first = patches.first().ok_or(Error::NoBlocks)?.dims();
        if let Some(p) = patches.iter().find(|p| p.dims() != first) {
            return Err(Error::DimsMismatch(first, p.dims()));
        }
        Ok(Batch { patches })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    /// Number of patches, I.
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_dims(&self) -> Dims {
        self.patches[0].dims()
    }

    /// Total voxels, N = I * C.
    pub fn voxel_count(&self) -> usize {
        self.len() * self.patch_dims().len()
    }

    /// Selected voxels, N'.
    pub fn selected_count(&self) -> usize {
        self.patches.iter().map(Patch::selected_count).sum()
    }

    /// Targets of all patches, concatenated in patch order.
    pub fn targets(&self) -> Vec<u8> {
        self.patches.iter().flat_map(|p| p.target().iter().copied()).collect()
    }

    pub fn selections(&self) -> Vec<u8> {
        self.patches
            .iter()
            .flat_map(|p| p.selection().iter().copied())
            .collect()
    }
}

/// Draws `batch_size` blocks (with replacement only when there are fewer
/// blocks than the batch size) and applies random x/y flips.
pub fn sample_batch(blocks: &[Patch], batch_size: usize, rng: &mut Rng) -> Result<Batch> {
    if blocks.is_empty() {
        return Err(Error::NoBlocks);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let picks: Vec<usize> = if blocks.len() < batch_size {
        (0..batch_size).map(|_| rng.index(blocks.len())).collect()
    } else {
        // partial Fisher-Yates
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        for i in 0..batch_size {
            let j = i + rng.index(blocks.len() - i);
            order.swap(i, j);
        }
        order.truncate(batch_size);
        order
    };
    let patches = picks
        .into_iter()
        .map(|i| {
            let mut p = blocks[i].clone();
            if rng.coin() {
                p.flip_x();
            }
            if rng.coin() {
                p.flip_y();
            }
            p
        })
        .collect();
    Batch::new(patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{build_partial_label, place_window, StructureExtent};
    use crate::volume::{BinaryMask3D, Spacing};

    fn volume(d: Dims) -> Volume3D {
        let v = (0..d.len()).map(|i| i as f32).collect();
        Volume3D::new(d, Spacing::isotropic(), v).unwrap()
    }

    fn slab(d: Dims, lo: usize, hi: usize) -> BinaryMask3D {
        BinaryMask3D::from_fn(d, Spacing::isotropic(), |x, y, z| {
            (lo..=hi).contains(&z) && x > 0 && y > 0
        })
        .unwrap()
    }

    #[test]
    fn starts_touch_boundary() {
        assert_eq!(block_starts(32, 16, 16), vec![0, 16]);
        assert_eq!(block_starts(48, 24, 12), vec![0, 12, 24]);
        assert_eq!(block_starts(10, 4, 4), vec![0, 4, 6]);
        assert_eq!(block_starts(5, 5, 2), vec![0]);
    }

    #[test]
    fn fully_annotated_keeps_every_block() {
        let d = Dims::new(8, 8, 8);
        let gt = slab(d, 0, 7);
        let ext = StructureExtent { z_min: 0, z_max: 7 };
        let pl = build_partial_label(&gt, &place_window(ext, 8, 1.0, 3)).unwrap();
        let blocks = extract_blocks(&volume(d), &pl, Dims::new(4, 4, 4), Dims::new(2, 2, 2)).unwrap();
        assert_eq!(blocks.len(), 27);
        assert!(blocks.iter().all(|b| b.selection().iter().all(|&s| s == 1)));
    }

    #[test]
    fn block_slice_statuses() {
        let d = Dims::new(4, 4, 32);
        let gt = slab(d, 10, 27);
        let ext = StructureExtent { z_min: 10, z_max: 27 };
        let mut plan = place_window(ext, 32, 6.0 / 18.0, 22);
        plan.window = (20, 25);
        let pl = build_partial_label(&gt, &plan).unwrap();
        let blocks = extract_blocks(&volume(d), &pl, Dims::new(4, 4, 16), Dims::new(4, 4, 16)).unwrap();
        assert_eq!(blocks.len(), 2);
        let selected_slices = |b: &Patch| -> Vec<usize> {
            (0..16).filter(|&z| b.selection()[z * 16] == 1).map(|z| z + b.origin().2).collect()
        };
        assert_eq!(selected_slices(&blocks[0]), (0..10).collect::<Vec<_>>());
        let mut expected: Vec<usize> = (20..=25).collect();
        expected.extend(28..32);
        assert_eq!(selected_slices(&blocks[1]), expected);
        // window slices carry ground truth, border slices zero
        let b = &blocks[1];
        let z = 22 - 16;
        assert_eq!(b.target()[z * 16 + 5], 1);
        assert!(b.target()[12 * 16..].iter().all(|&t| t == 0));
    }

    #[test]
    fn unannotated_blocks_are_excluded() {
        let d = Dims::new(4, 4, 32);
        let gt = slab(d, 1, 30);
        let ext = StructureExtent { z_min: 1, z_max: 30 };
        let plan = place_window(ext, 32, 0.1, 3);
        let pl = build_partial_label(&gt, &plan).unwrap().without_borders();
        let blocks = extract_blocks(&volume(d), &pl, Dims::new(4, 4, 8), Dims::new(4, 4, 8)).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].origin().2, 0);
    }

    #[test]
    fn patch_larger_than_volume() {
        let d = Dims::new(4, 4, 4);
        let gt = slab(d, 1, 2);
        let pl = build_partial_label(&gt, &place_window(StructureExtent { z_min: 1, z_max: 2 }, 4, 1.0, 1))
            .unwrap();
        assert!(matches!(
            extract_blocks(&volume(d), &pl, Dims::new(5, 4, 4), Dims::new(1, 1, 1)),
            Err(Error::PatchTooLarge { .. })
        ));
    }

    fn tiny_patch(seed: f32) -> Patch {
        let d = Dims::new(3, 2, 2);
        let image = (0..12).map(|i| seed + i as f32).collect();
        let target = vec![0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0];
        Patch::new(d, image, target, vec![1; 12]).unwrap()
    }

    #[test]
    fn single_block_with_replacement() {
        let b = tiny_patch(0.0);
        let batch = sample_batch(std::slice::from_ref(&b), 8, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(batch.len(), 8);
        assert_eq!(batch.voxel_count(), 8 * 12);
        for p in batch.patches() {
            let mut variants = vec![];
            for fx in [false, true] {
                for fy in [false, true] {
                    let mut q = b.clone();
                    if fx {
                        q.flip_x();
                    }
                    if fy {
                        q.flip_y();
                    }
                    variants.push(q);
                }
            }
            assert!(variants.contains(p));
        }
    }

    #[test]
    fn without_replacement_when_enough_blocks() {
        let blocks: Vec<Patch> = (0..10).map(|i| tiny_patch(100.0 * i as f32)).collect();
        let batch = sample_batch(&blocks, 8, &mut Rng::new(4, 0)).unwrap();
        let mut seen: Vec<i32> = batch
            .patches()
            .iter()
            .map(|p| (p.image().iter().cloned().fold(f32::INFINITY, f32::min) / 100.0) as i32)
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn sampling_is_deterministic() {
        let blocks: Vec<Patch> = (0..5).map(|i| tiny_patch(i as f32)).collect();
        let a = sample_batch(&blocks, 8, &mut Rng::new(9, 1)).unwrap();
        let b = sample_batch(&blocks, 8, &mut Rng::new(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_blocks_error() {
        assert!(matches!(
            sample_batch(&[], 8, &mut Rng::new(0, 0)),
            Err(Error::NoBlocks)
        ));
    }

    #[test]
    fn flips_preserve_slice_constant_selection() {
        let d = Dims::new(3, 2, 2);
        let sel = vec![1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let mut p = Patch::new(d, vec![0.0; 12], vec![0; 12], sel.clone()).unwrap();
        p.flip_x();
        p.flip_y();
        assert_eq!(p.selection(), &sel[..]);
        assert_eq!(p.mask_channel(), p.selection());
    }
}
