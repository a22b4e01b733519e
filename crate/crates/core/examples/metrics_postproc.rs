//! Post-processing and evaluation on a hand-made noisy prediction.

use sparseg::metrics::evaluate;
use sparseg::postproc::{fill_holes, largest_component, postprocess};
use sparseg::volume::{BinaryMask3D, Dims, Spacing};

fn main() -> sparseg::Result<()> {
    let d = Dims::new(24, 24, 12);
    let s = Spacing::new(1.5, 1.5, 3.0)?;
    let ball = |x: usize, y: usize, z: usize, r: f64| {
        let (dx, dy, dz) = (x as f64 - 12.0, y as f64 - 12.0, (z as f64 - 6.0) * 2.0);
        dx * dx + dy * dy + dz * dz <= r * r
    };
    let gt = BinaryMask3D::from_fn(d, s, |x, y, z| ball(x, y, z, 7.0))?;
    // a hole in the middle and a stray blob in the corner
    let pred = BinaryMask3D::from_fn(d, s, |x, y, z| {
        (ball(x, y, z, 7.0) && !ball(x, y, z, 2.5)) || (x < 3 && y < 3 && z < 2)
    })?;
    println!(
        "voxels: gt {}, raw {}, filled {}, largest {}",
        gt.count(),
        pred.count(),
        fill_holes(&pred).count(),
        largest_component(&pred).count()
    );
    for (name, m) in [("raw", pred.clone()), ("post-processed", postprocess(&pred))] {
        let r = evaluate(&m, &gt)?;
        println!(
            "{name:15} Dice {:.4}  Hausdorff {:6.2} mm  2D ASSD {:.3} mm",
            r.dice,
            r.hausdorff_mm.unwrap_or(f64::NAN),
            r.assd2d_mm.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
