//! A reduced equal-effort comparison: one seed, small phantoms, short
//! training. Writes cases.csv, aggregate.csv, report.svg and manifest.json.
//!
//!     cargo run --release --example equal_effort -- [out_dir]

use sparseg::harness::{find, run_experiment_with_progress, ExperimentConfig, Group, Metric};
use sparseg::phantom::PhantomSpec;
use sparseg::trainer::TrainConfig;
use sparseg::volume::Dims;

fn main() -> sparseg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "equal_effort_out".into());
    let config = ExperimentConfig {
        phantom: PhantomSpec {
            dims: Dims::new(32, 32, 24),
            size_range: (0.3, 0.5),
            ..PhantomSpec::default()
        },
        train_partial: 10,
        validation: 3,
        test: 8,
        seeds: vec![1],
        train: TrainConfig {
            patch: Dims::new(16, 16, 12),
            epochs_phase1: 8,
            epochs_phase2: 8,
            iterations_per_epoch: 6,
            patience: 3,
            restart_period: 4,
            ..TrainConfig::default()
        },
        out_dir: out.clone().into(),
        ..ExperimentConfig::default()
    };
    let report = run_experiment_with_progress(&config, &|m| eprintln!("{m}"))?;
    for e in &report.effort {
        println!(
            "seed {}: {} partial slices vs {} full slices",
            e.seed, e.partial_slices, e.full_slices
        );
    }
    let mut scenarios: Vec<_> = report.cases.iter().map(|c| c.scenario).collect();
    scenarios.dedup();
    for s in scenarios {
        let d = find(&report.aggregates, s, Group::AllCases, Metric::Dice).expect("dice");
        println!("{s:15} Dice {:.4} +/- {:.4} [{:.4}, {:.4}]", d.mean, d.std, d.min, d.max);
    }
    println!("report written to {out}");
    Ok(())
}
