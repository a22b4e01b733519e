//! Equal-effort experiment: full annotation of a few cases against partial
//! annotation of many, across seeds, with CSV and SVG reporting.

pub mod data;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::compute_extent;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{encode_checkpoint, Checkpoint};
use crate::phantom::{generate_cases, PhantomSpec};
use crate::trainer::{annotate_cases, predict, train, LabeledCase, Regime, TrainConfig, TrainData};
use crate::volume::Rng;

pub use report::{
    aggregate, aggregate_csv, cases_csv, find, parse_cases_csv, render_svg, AggregateRow, CaseRow,
    Group, Metric, Stats,
};

/// One arm of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Scenario {
    pub regime: Regime,
    pub finetune: bool,
    /// Always true for the full regime.
    pub borders: bool,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::new(Regime::Full, false, true),
        Scenario::new(Regime::Full, true, true),
        Scenario::new(Regime::Partial, false, true),
        Scenario::new(Regime::Partial, true, true),
        Scenario::new(Regime::Partial, false, false),
        Scenario::new(Regime::Partial, true, false),
    ];

    pub const fn new(regime: Regime, finetune: bool, borders: bool) -> Self {
        let borders = matches!(regime, Regime::Full) || borders;
        Scenario {
            regime,
            finetune,
            borders,
        }
    }

    fn rank(self) -> usize {
        Scenario::ALL.iter().position(|&s| s == self).unwrap_or(usize::MAX)
    }

    /// Training run that produces this scenario's weights; fine-tuned and
    /// plain scenarios share phase 1.
    pub fn run_name(self) -> &'static str {
        match (self.regime, self.borders) {
            (Regime::Full, _) => "full",
            (Regime::Partial, true) => "partial-wb",
            (Regime::Partial, false) => "partial-wob",
        }
    }
}

impl PartialOrd for Scenario {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scenario {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.run_name())?;
        if self.finetune {
            f.write_str("-ft")?;
        }
        Ok(())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {s:?}")))
    }
}

impl TryFrom<String> for Scenario {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    /// Partially annotated training cases, m.
    pub train_partial: usize,
    /// Fully annotated training cases; must equal round(m * p) when set.
    pub train_full: Option<usize>,
    pub validation: usize,
    pub test: usize,
    pub percentage: f64,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<Scenario>,
    /// Training template; regime, percentage, borders and seed are set per run.
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phantom: PhantomSpec::default(),
            train_partial: 20,
            train_full: None,
            validation: 6,
            test: 20,
            percentage: 0.2,
            seeds: vec![1, 2, 3, 4],
            scenarios: Scenario::ALL.to_vec(),
            train: TrainConfig {
                epochs_phase1: 30,
                epochs_phase2: 30,
                iterations_per_epoch: 8,
                patience: 5,
                restart_period: 10,
                ..TrainConfig::default()
            },
            out_dir: PathBuf::from("experiment"),
        }
    }
}

impl ExperimentConfig {
    pub fn full_cases(&self) -> usize {
        (self.train_partial as f64 * self.percentage).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.phantom.validate()?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.scenarios.is_empty() {
            return bad("scenarios must not be empty".into());
        }
        if !(self.percentage > 0.0 && self.percentage < 1.0) {
            return bad(format!("percentage {} outside (0, 1)", self.percentage));
        }
        if let Some(k) = self.train_full {
            if k != self.full_cases() {
                return bad(format!(
                    "train_full {k} breaks equal effort; round(m * p) = {}",
                    self.full_cases()
                ));
            }
        }
        if self.train_partial == 0 || self.full_cases() == 0 {
            return bad("both arms need at least one training case".into());
        }
        if self.validation == 0 || self.test == 0 {
            return bad("validation and test sets must be non-empty".into());
        }
        for s in &self.scenarios {
            self.run_config(*s, self.seeds[0]).validate()?;
        }
        Ok(())
    }

    fn run_config(&self, s: Scenario, seed: u64) -> TrainConfig {
        TrainConfig {
            regime: s.regime,
            percentage: self.percentage,
            borders: s.borders,
            seed,
            train_dir: None,
            val_dir: None,
            ..self.train.clone()
        }
    }
}

/// Annotated-slice totals of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortRecord {
    pub seed: u64,
    /// Window slices over the m partial cases.
    pub partial_slices: usize,
    /// Slices delineated in the full arm.
    pub full_slices: usize,
    /// round(m * p) cases of the partial cases' mean depth: p times their
    /// total structure depth.
    pub equal_depth_slices: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub scenario: Scenario,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub cases: Vec<CaseRow>,
    pub aggregates: Vec<AggregateRow>,
    pub effort: Vec<EffortRecord>,
    pub failures: Vec<Failure>,
}

struct SeedData {
    partial: Vec<LabeledCase>,
    full: Vec<LabeledCase>,
    val: Vec<LabeledCase>,
    test: Vec<LabeledCase>,
}

/// Phantom index offsets of the validation and test sets within a seed.
pub const VAL_OFFSET: u64 = 1_000_000;
pub const TEST_OFFSET: u64 = 2_000_000;

fn seed_data(config: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let rng = Rng::labeled(seed, "dataset");
    let cases = |lo: u64, n: usize| -> Result<Vec<LabeledCase>> {
        Ok(generate_cases(&config.phantom, &rng, lo..lo + n as u64)?
            .into_iter()
            .map(|(image, gt)| LabeledCase { image, gt })
            .collect())
    };
    let partial = cases(0, config.train_partial)?;
    // the full arm delineates a subset of the same population
    let full = partial[..config.full_cases().min(partial.len())].to_vec();
    let full = if full.len() < config.full_cases() {
        cases(0, config.full_cases())?
    } else {
        full
    };
    Ok(SeedData {
        partial,
        full,
        val: cases(VAL_OFFSET, config.validation)?,
        test: cases(TEST_OFFSET, config.test)?,
    })
}

fn effort(config: &ExperimentConfig, seed: u64, data: &SeedData) -> Result<EffortRecord> {
    let partial_cfg = config.run_config(Scenario::new(Regime::Partial, false, true), seed);
    let full_cfg = config.run_config(Scenario::new(Regime::Full, false, true), seed);
    let partial_slices = annotate_cases(&data.partial, &partial_cfg)?
        .iter()
        .map(|c| c.cost)
        .sum();
    let full_slices = annotate_cases(&data.full, &full_cfg)?.iter().map(|c| c.cost).sum();
    let depth: usize = data
        .partial
        .iter()
        .map(|c| compute_extent(&c.gt).map(|e| e.len()))
        .sum::<Result<usize>>()?;
    let record = EffortRecord {
        seed,
        partial_slices,
        full_slices,
        equal_depth_slices: config.percentage * depth as f64,
        tolerance: config.train_partial as f64 / 2.0,
    };
    if (record.partial_slices as f64 - record.equal_depth_slices).abs() > record.tolerance {
        return Err(Error::InvalidConfig(format!(
            "seed {seed}: equal-effort bookkeeping broken ({} partial slices vs {})",
            record.partial_slices, record.equal_depth_slices
        )));
    }
    Ok(record)
}

struct Job {
    seed_index: usize,
    run: Scenario,
    scenarios: Vec<Scenario>,
}

struct JobOutput {
    phase1: Checkpoint,
    phase2: Option<Checkpoint>,
    record_csv: String,
    rows: Vec<CaseRow>,
}

fn run_job(config: &ExperimentConfig, seed: u64, data: &SeedData, job: &Job) -> Result<JobOutput> {
    let finetune = job.scenarios.iter().any(|s| s.finetune);
    let mut cfg = config.run_config(job.run, seed);
    if !finetune {
        cfg.epochs_phase2 = 0;
    }
    let cases = match job.run.regime {
        Regime::Full => &data.full,
        Regime::Partial => &data.partial,
    };
    let train_data = TrainData {
        train: annotate_cases(cases, &cfg)?,
        val: data.val.clone(),
    };
    let outcome = train(&cfg, &train_data)?;
    let mut rows = Vec::new();
    for &scenario in &job.scenarios {
        let params = if scenario.finetune {
            &outcome.phase2.params
        } else {
            &outcome.phase1.params
        };
        for (case, c) in data.test.iter().enumerate() {
            let pred = predict(params, &c.image, cfg.patch)?;
            rows.push(CaseRow {
                seed,
                scenario,
                case,
                metrics: evaluate(&pred, &c.gt)?,
            });
        }
    }
    Ok(JobOutput {
        phase1: outcome.phase1,
        phase2: finetune.then_some(outcome.phase2),
        record_csv: outcome.record.to_csv(),
        rows,
    })
}

/// Worker count: `SPARSEG_THREADS` when set, else one per scenario.
pub fn thread_count(scenarios: usize) -> usize {
    std::env::var("SPARSEG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(scenarios)
        .max(1)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with_progress(config, &|_| {})
}

/// Runs every scenario for every seed and writes the artifacts to
/// `config.out_dir`. Training failures are recorded per scenario.
pub fn run_experiment_with_progress(
    config: &ExperimentConfig,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentReport> {
    config.validate()?;
    let mut scenarios = config.scenarios.clone();
    scenarios.sort();
    scenarios.dedup();
    let mut datasets = Vec::new();
    let mut effort_records = Vec::new();
    for &seed in &config.seeds {
        let data = seed_data(config, seed)?;
        effort_records.push(effort(config, seed, &data)?);
        datasets.push(data);
    }
    let mut jobs = Vec::new();
    for seed_index in 0..config.seeds.len() {
        for &s in &scenarios {
            if let Some(j) = jobs
                .iter_mut()
                .find(|j: &&mut Job| j.seed_index == seed_index && j.run.run_name() == s.run_name())
            {
                j.scenarios.push(s);
            } else {
                jobs.push(Job {
                    seed_index,
                    run: s,
                    scenarios: vec![s],
                });
            }
        }
    }
    let workers = thread_count(scenarios.len()).min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<JobOutput>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let seed = config.seeds[job.seed_index];
                let out = run_job(config, seed, &datasets[job.seed_index], job);
                progress(&format!(
                    "seed {seed} {}: {}",
                    job.run.run_name(),
                    if out.is_ok() { "done" } else { "failed" }
                ));
                results.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("no worker panicked");

    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut artifacts = BTreeMap::new();
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let seed = config.seeds[job.seed_index];
        match result.expect("every job ran") {
            Ok(out) => {
                let dir = PathBuf::from(format!("seed_{seed}")).join(job.run.run_name());
                let mut files = vec![
                    ("record.csv", out.record_csv.into_bytes()),
                    ("best_phase1.ckpt", encode_checkpoint(&out.phase1)),
                ];
                if let Some(p2) = &out.phase2 {
                    files.push(("best_phase2.ckpt", encode_checkpoint(p2)));
                }
                for (name, bytes) in files {
                    write_artifact(out_dir, &dir.join(name), &bytes, &mut artifacts)?;
                }
                cases.extend(out.rows);
            }
            Err(e) => failures.extend(job.scenarios.iter().map(|&scenario| Failure {
                seed,
                scenario,
                error: e.to_string(),
            })),
        }
    }
    let aggregates = aggregate(&cases);
    write_artifact(out_dir, Path::new("cases.csv"), cases_csv(&cases).as_bytes(), &mut artifacts)?;
    write_report_files(out_dir, &aggregates, &mut artifacts)?;
    let manifest = serde_json::json!({
        "config": config,
        "effort": effort_records,
        "failures": failures,
        "artifacts": artifacts,
    });
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentReport {
        cases,
        aggregates,
        effort: effort_records,
        failures,
    })
}

fn write_artifact(
    root: &Path,
    rel: &Path,
    bytes: &[u8],
    hashes: &mut BTreeMap<String, String>,
) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let key = rel.to_string_lossy().replace('\\', "/");
    hashes.insert(key, sha256_hex(bytes));
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_report_files(
    dir: &Path,
    aggregates: &[AggregateRow],
    hashes: &mut BTreeMap<String, String>,
) -> Result<()> {
    write_artifact(dir, Path::new("aggregate.csv"), aggregate_csv(aggregates).as_bytes(), hashes)?;
    write_artifact(dir, Path::new("report.svg"), render_svg(aggregates).as_bytes(), hashes)
}

/// Rebuilds `aggregate.csv` and `report.svg` from `cases.csv` in `dir`.
pub fn rebuild_report(dir: &Path) -> Result<Vec<AggregateRow>> {
    let path = dir.join("cases.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let aggregates = aggregate(&parse_cases_csv(&text)?);
    write_report_files(dir, &aggregates, &mut BTreeMap::new())?;
    Ok(aggregates)
}
