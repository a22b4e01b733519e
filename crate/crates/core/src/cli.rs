//! Command-line interface behind the `sparseg` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::annotation::{annotation_cost, compute_extent, plan_annotation};
use crate::error::{Error, Result};
use crate::harness::data::{read_dataset, write_dataset};
use crate::harness::{rebuild_report, run_experiment_with_progress, ExperimentConfig, VAL_OFFSET};
use crate::metrics::evaluate;
use crate::model::write_checkpoint;
use crate::phantom::{generate_cases, PhantomSpec};
use crate::postproc::postprocess;
use crate::trainer::{annotate_cases, train, LabeledCase, TrainConfig, TrainData};
use crate::volume::{read_mask, Rng};

#[derive(Debug, Parser)]
#[command(name = "sparseg", version, about = "Segmentation training from partially annotated volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic phantom cases as MVOL image/segmentation pairs.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Phantom spec as JSON; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Print the annotation plan for a segmentation volume.
    Plan {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        percentage: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run both training phases from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print Dice, Hausdorff and 2D ASSD of a prediction as JSON.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Fill holes and keep the largest component of the prediction first.
        #[arg(long)]
        postproc: bool,
    },
    /// Run the full-versus-partial comparison across seeds.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild aggregate.csv and report.svg from an experiment's cases.csv.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 2 on usage errors, 1 on failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", one_line(&e.to_string()));
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn one_line(msg: &str) -> String {
    msg.lines()
        .take_while(|l| !l.trim().is_empty())
        .map(str::trim)
        .collect::<Vec<_>>()
        .join(" ")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            cases,
            seed,
            spec,
        } => {
            let spec = match spec {
                Some(p) => read_json(&p)?,
                None => PhantomSpec::default(),
            };
            write_dataset(&out, &spec, cases, seed)?;
            println!("wrote {cases} cases to {}", out.display());
        }
        Command::Plan {
            mask,
            percentage,
            seed,
        } => {
            let gt = read_mask(&mask)?;
            let extent = compute_extent(&gt)?;
            let plan = plan_annotation(extent, gt.dims().z, percentage, &mut Rng::labeled(seed, "plan"))?;
            let out = json!({
                "z_min": extent.z_min,
                "z_max": extent.z_max,
                "window": [plan.window.0, plan.window.1],
                "percentage": percentage,
                "seed": seed,
                "cost": annotation_cost(&plan),
            });
            println!("{out}");
        }
        Command::Train { config, out, seed } => {
            let mut cfg: TrainConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            train_command(&cfg, &out)?;
        }
        Command::Eval { pred, gt, postproc } => {
            let mut p = read_mask(&pred)?;
            if postproc {
                p = postprocess(&p);
            }
            let g = read_mask(&gt)?;
            println!("{}", serde_json::to_string(&evaluate(&p, &g)?)?);
        }
        Command::Experiment { config, out, seed } => {
            let mut cfg: ExperimentConfig = match config {
                Some(p) => read_json(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let start = Instant::now();
            let report = run_experiment_with_progress(&cfg, &|m| eprintln!("{m}"))?;
            for f in &report.failures {
                eprintln!("seed {} {} failed: {}", f.seed, f.scenario, f.error);
            }
            println!(
                "{} case rows written to {} in {:.1}s",
                report.cases.len(),
                cfg.out_dir.display(),
                start.elapsed().as_secs_f64()
            );
            if !report.failures.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{} scenario runs failed",
                    report.failures.len()
                )));
            }
        }
        Command::Report { dir } => {
            let rows = rebuild_report(&dir)?;
            println!("{} aggregate rows written to {}", rows.len(), dir.display());
        }
    }
    Ok(())
}

fn phantom_cases(seed: u64, lo: u64, n: usize) -> Result<Vec<LabeledCase>> {
    let rng = Rng::labeled(seed, "dataset");
    Ok(generate_cases(&PhantomSpec::default(), &rng, lo..lo + n as u64)?
        .into_iter()
        .map(|(image, gt)| LabeledCase { image, gt })
        .collect())
}

fn train_command(cfg: &TrainConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let train_cases = match &cfg.train_dir {
        Some(d) => read_dataset(d)?,
        None => phantom_cases(cfg.seed, 0, cfg.train_cases)?,
    };
    let val = match &cfg.val_dir {
        Some(d) => read_dataset(d)?,
        None => phantom_cases(cfg.seed, VAL_OFFSET, cfg.val_cases)?,
    };
    let data = TrainData {
        train: annotate_cases(&train_cases, cfg)?,
        val,
    };
    let outcome = train(cfg, &data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("record.csv"), &outcome.record.to_csv())?;
    write_checkpoint(&outcome.phase1, out.join("best_phase1.ckpt"))?;
    write_checkpoint(&outcome.phase2, out.join("best_phase2.ckpt"))?;
    let summary = json!({
        "seed": cfg.seed,
        "config": cfg,
        "annotated_slices": data.train.iter().map(|c| c.cost).sum::<usize>(),
        "phase1": {"epoch": outcome.phase1.epoch, "val_dice": outcome.phase1.val_score},
        "phase2": {"epoch": outcome.phase2.epoch, "val_dice": outcome.phase2.val_score},
        "final_val_dice": outcome.phase2.val_score,
    });
    write_text(&out.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!(
        "best validation Dice {:.4} (phase 1 {:.4}); outputs in {}",
        outcome.phase2.val_score,
        outcome.phase1.val_score,
        out.display()
    );
    Ok(())
}
