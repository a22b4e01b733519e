//! Trains on partially annotated phantoms and evaluates on held-out cases.
//! A short budget keeps the run to a couple of minutes on one core.

use sparseg::harness::{TEST_OFFSET, VAL_OFFSET};
use sparseg::metrics::evaluate;
use sparseg::phantom::{generate_cases, PhantomSpec};
use sparseg::trainer::{annotate_cases, predict, train, LabeledCase, TrainConfig, TrainData};
use sparseg::volume::Rng;

fn cases(rng: &Rng, lo: u64, n: u64) -> sparseg::Result<Vec<LabeledCase>> {
    Ok(generate_cases(&PhantomSpec::default(), rng, lo..lo + n)?
        .into_iter()
        .map(|(image, gt)| LabeledCase { image, gt })
        .collect())
}

fn main() -> sparseg::Result<()> {
    let config = TrainConfig {
        epochs_phase1: 10,
        epochs_phase2: 10,
        iterations_per_epoch: 8,
        restart_period: 5,
        seed: 1,
        ..TrainConfig::default()
    };
    let rng = Rng::labeled(config.seed, "dataset");
    let train_cases = annotate_cases(&cases(&rng, 0, 20)?, &config)?;
    let slices: usize = train_cases.iter().map(|c| c.cost).sum();
    println!("20 cases, {slices} delineated slices");
    let data = TrainData {
        train: train_cases,
        val: cases(&rng, VAL_OFFSET, 6)?,
    };
    let out = train(&config, &data)?;
    for row in &out.record.rows {
        println!(
            "phase {} epoch {:2} lr {:.2e} train {:+.4} val {:+.4} val Dice {:.4}",
            row.phase, row.epoch, row.lr, row.train_loss, row.val_loss, row.val_dice
        );
    }
    for c in cases(&rng, TEST_OFFSET, 5)? {
        let m = evaluate(&predict(&out.phase2.params, &c.image, config.patch)?, &c.gt)?;
        println!(
            "test Dice {:.4}  Hausdorff {:.2} mm  2D ASSD {:.2} mm",
            m.dice,
            m.hausdorff_mm.unwrap_or(f64::NAN),
            m.assd2d_mm.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
