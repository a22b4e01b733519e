//! The batch Dice loss restricted to annotated voxels, its gradient, and why
//! it is computed over the whole batch instead of averaged per patch.

use sparseg::loss::{batch_dice, selective_batch_dice, LossInput};

fn main() -> sparseg::Result<()> {
    let r = [0.9, 0.8, 0.3, 0.6, 0.1, 0.7];
    let t = [1, 1, 0, 0, 0, 1];
    let s = [1, 1, 1, 0, 0, 1];
    let out = selective_batch_dice(LossInput { r: &r, t: &t, s: &s })?;
    println!("selective loss {:.6}", out.value);
    for (j, g) in out.gradient.iter().enumerate() {
        println!("  dL/dr[{j}] = {g:+.6}{}", if s[j] == 0 { "  (unselected)" } else { "" });
    }
    let ones = [1u8; 6];
    let all = selective_batch_dice(LossInput { r: &r, t: &t, s: &ones })?;
    println!("all-ones selection {:.6} = batch Dice {:.6}", all.value, batch_dice(&r, &t)?);

    // Two patches: one with a small structure, one empty.
    let (r1, t1) = ([0.9, 0.1], [1, 0]);
    let (r2, t2) = ([0.2, 0.2], [0, 0]);
    let per_patch = (batch_dice(&r1, &t1)? + batch_dice(&r2, &t2)?) / 2.0;
    let joint = batch_dice(&[r1, r2].concat(), &[t1, t2].concat())?;
    println!("per-patch mean {per_patch:.4} vs batch {joint:.4}");
    Ok(())
}
