//! Case directories: `case_<i>_img.mvol` / `case_<i>_seg.mvol` pairs plus a
//! `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{generate_cases, PhantomSpec};
use crate::trainer::LabeledCase;
use crate::volume::{read_mask, read_volume, write_mvol, Grid, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub spec: PhantomSpec,
    pub seed: u64,
    pub cases: Vec<usize>,
}

pub fn image_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join(format!("case_{i}_img.mvol"))
}

pub fn seg_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join(format!("case_{i}_seg.mvol"))
}

/// Generates phantoms `0..n` of the seed and writes them to `dir`.
pub fn write_dataset(dir: &Path, spec: &PhantomSpec, n: usize, seed: u64) -> Result<DataManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rng = Rng::labeled(seed, "dataset");
    let cases = generate_cases(spec, &rng, 0..n as u64)?;
    for (i, (img, seg)) in cases.into_iter().enumerate() {
        write_mvol(&Grid::Volume(img), image_path(dir, i))?;
        write_mvol(&Grid::Mask(seg), seg_path(dir, i))?;
    }
    let manifest = DataManifest {
        spec: spec.clone(),
        seed,
        cases: (0..n).collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads the cases listed in `dir/manifest.json`.
pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledCase>> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DataManifest = serde_json::from_str(&text)?;
    manifest
        .cases
        .iter()
        .map(|&i| {
            let image = read_volume(image_path(dir, i))?;
            let gt = read_mask(seg_path(dir, i))?;
            if image.dims() != gt.dims() {
                return Err(Error::DimsMismatch(image.dims(), gt.dims()));
            }
            Ok(LabeledCase { image, gt })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec {
            dims: Dims::new(16, 16, 16),
            size_range: (0.3, 0.4),
            ..PhantomSpec::default()
        };
        write_dataset(dir.path(), &spec, 2, 5).unwrap();
        let cases = read_dataset(dir.path()).unwrap();
        let expect = generate_cases(&spec, &Rng::labeled(5, "dataset"), 0..2).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[1].gt, expect[1].1);
        assert_eq!(cases[1].image, expect[1].0);
        assert!(read_dataset(&dir.path().join("missing")).is_err());
    }
}
