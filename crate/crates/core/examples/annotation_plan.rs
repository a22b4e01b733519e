//! Simulates partial annotation of one phantom and shows which slices end up
//! delineated, which are free border slices and which carry no label.

use sparseg::annotation::{annotation_cost, build_partial_label, compute_extent, plan_annotation, SliceStatus};
use sparseg::phantom::{generate_phantom, PhantomSpec};
use sparseg::volume::Rng;

fn main() -> sparseg::Result<()> {
    let (_, gt) = generate_phantom(&PhantomSpec::default(), &mut Rng::new(3, 0))?;
    let extent = compute_extent(&gt)?;
    for p in [0.2, 0.5, 1.0] {
        let plan = plan_annotation(extent, gt.dims().z, p, &mut Rng::new(3, 1))?;
        let label = build_partial_label(&gt, &plan)?;
        let row: String = label
            .statuses()
            .iter()
            .map(|s| match s {
                SliceStatus::Window => 'W',
                SliceStatus::Border => '.',
                SliceStatus::Unannotated => '?',
            })
            .collect();
        println!(
            "p={p:.1}  extent {}..={}  window {}..={}  cost {:2}  {row}",
            extent.z_min,
            extent.z_max,
            plan.window.0,
            plan.window.1,
            annotation_cost(&plan)
        );
    }
    println!("W = delineated, . = border (known empty), ? = unannotated");
    Ok(())
}
