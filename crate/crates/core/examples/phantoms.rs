//! Generates a few phantoms, prints their structure extents and writes the
//! first one as MVOL files.
//!
//!     cargo run --example phantoms -- [out_dir]

use sparseg::annotation::compute_extent;
use sparseg::phantom::{generate_cases, PhantomSpec};
use sparseg::volume::{write_mvol, Grid, Rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec::default();
    let cases = generate_cases(&spec, &Rng::labeled(1, "dataset"), 0..5)?;
    println!("dims {} spacing {:?} mm", spec.dims, spec.spacing.as_array());
    for (i, (img, seg)) in cases.iter().enumerate() {
        let extent = compute_extent(seg)?;
        let (inside, outside) = img
            .voxels()
            .iter()
            .zip(seg.voxels())
            .fold((0.0, 0.0), |(a, b), (&v, &m)| {
                if m == 1 { (a + f64::from(v), b) } else { (a, b + f64::from(v)) }
            });
        let n = seg.count();
        println!(
            "case {i}: {n} voxels, slices {}..={}, mean intensity inside {:.2} outside {:.2}",
            extent.z_min,
            extent.z_max,
            inside / n as f64,
            outside / (seg.dims().len() - n) as f64
        );
    }
    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir)?;
        let (img, seg) = cases.into_iter().next().expect("five cases");
        write_mvol(&Grid::Volume(img), format!("{dir}/case_0_img.mvol"))?;
        write_mvol(&Grid::Mask(seg), format!("{dir}/case_0_seg.mvol"))?;
        println!("wrote {dir}/case_0_img.mvol and {dir}/case_0_seg.mvol");
    }
    Ok(())
}
