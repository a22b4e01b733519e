//! Two-phase training, validation and tiled inference.
//!
//! Phase 1 trains a fresh network with plateau reduction and keeps the
//! weights with the best validation Dice. Phase 2 restarts from exactly those
//! weights with periodic learning-rate restarts. Both regimes share this
//! code; the full regime is the partial one with every structure slice
//! annotated.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::annotation::{build_partial_label, compute_extent, plan_annotation, PartialLabel};
use crate::error::{Error, Result};
use crate::loss::{batch_dice, selective_batch_dice, LossInput};
use crate::metrics::dice_score;
use crate::model::{backward, forward, forward_volume, init_params, Checkpoint, NetParams};
use crate::optim::{AdamState, Optimizer, Phase, ScheduleConfig, ScheduleState, SgdMomentum};
use crate::postproc::postprocess;
use crate::sampling::{block_starts, extract_blocks, sample_batch, Patch};
use crate::volume::{BinaryMask3D, Dims, Rng, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Full,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Training hyperparameters. Serialized as flat JSON keys; every key is
/// optional and falls back to the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Fraction of structure slices annotated per case. Ignored (treated as
    /// 1.0) in the full regime.
    pub percentage: f64,
    pub batch_size: usize,
    pub patch: Dims,
    /// Block stride; half the patch when absent.
    pub stride: Option<Dims>,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub iterations_per_epoch: usize,
    pub initial_lr: f64,
    pub lr_factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    pub restart_period: usize,
    pub optimizer: OptimizerKind,
    /// Momentum for `optimizer = "sgd"`.
    pub momentum: f64,
    /// Keep border slices as annotated-empty (partial regime only).
    pub borders: bool,
    pub seed: u64,
    /// Directories of `case_<i>_img.mvol` / `case_<i>_seg.mvol` pairs. When
    /// absent, phantoms are generated from the seed instead.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub train_cases: usize,
    pub val_cases: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        TrainConfig {
            regime: Regime::Partial,
            percentage: 0.2,
            batch_size: 8,
            patch: Dims::new(24, 24, 16),
            stride: None,
            epochs_phase1: 40,
            epochs_phase2: 40,
            iterations_per_epoch: 16,
            initial_lr: s.initial_lr,
            lr_factor: s.factor,
            patience: s.patience,
            threshold: s.threshold,
            min_lr: s.min_lr,
            restart_period: s.restart_period,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            borders: true,
            seed: 0,
            train_dir: None,
            val_dir: None,
            train_cases: 20,
            val_cases: 6,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            initial_lr: self.initial_lr,
            factor: self.lr_factor,
            patience: self.patience,
            threshold: self.threshold,
            min_lr: self.min_lr,
            restart_period: self.restart_period,
        }
    }

    pub fn effective_percentage(&self) -> f64 {
        match self.regime {
            Regime::Full => 1.0,
            Regime::Partial => self.percentage,
        }
    }

    pub fn effective_stride(&self) -> Dims {
        self.stride.unwrap_or(half(self.patch))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.schedule().validate()?;
        if self.regime == Regime::Partial && !(self.percentage > 0.0 && self.percentage < 1.0) {
            return bad(format!(
                "partial regime needs percentage in (0, 1), got {}",
                self.percentage
            ));
        }
        if self.batch_size == 0 || self.iterations_per_epoch == 0 {
            return bad("batch_size and iterations_per_epoch must be >= 1".into());
        }
        if self.patch.is_empty() {
            return bad(format!("patch {} must be positive", self.patch));
        }
        let s = self.effective_stride();
        if s.is_empty() {
            return bad(format!("stride {s} must be positive"));
        }
        if self.optimizer == OptimizerKind::Sgd && !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}

fn half(d: Dims) -> Dims {
    Dims::new((d.x / 2).max(1), (d.y / 2).max(1), (d.z / 2).max(1))
}

/// An image with its complete ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub image: Volume3D,
    pub gt: BinaryMask3D,
}

/// An image with the label a user would provide for it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCase {
    pub image: Volume3D,
    pub label: PartialLabel,
    /// Delineated slices.
    pub cost: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub train: Vec<TrainCase>,
    pub val: Vec<LabeledCase>,
}

/// Simulates annotation of each case. Case `i` uses its own derived stream,
/// so plans do not depend on the border setting or on other cases.
pub fn annotate_cases(cases: &[LabeledCase], config: &TrainConfig) -> Result<Vec<TrainCase>> {
    let p = config.effective_percentage();
    let base = Rng::labeled(config.seed, "annotation");
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let extent = compute_extent(&c.gt)?;
            let plan = plan_annotation(extent, c.gt.dims().z, p, &mut base.derive(i as u64))?;
            let mut label = build_partial_label(&c.gt, &plan)?;
            if config.regime == Regime::Partial && !config.borders {
                label = label.without_borders();
            }
            Ok(TrainCase {
                image: c.image.clone(),
                label,
                cost: plan.window_len(),
            })
        })
        .collect()
}

/// One row per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// Epoch within its phase, from 1.
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEvent {
    pub phase: u8,
    pub epoch: usize,
    pub val_dice: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub rows: Vec<EpochRow>,
    pub checkpoints: Vec<CheckpointEvent>,
}

impl TrainRecord {
    pub fn extend(&mut self, other: TrainRecord) {
        self.rows.extend(other.rows);
        self.checkpoints.extend(other.checkpoints);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,lr,train_loss,val_loss,val_dice,checkpoint\n");
        for r in &self.rows {
            let saved = self
                .checkpoints
                .iter()
                .any(|c| c.phase == r.phase && c.epoch == r.epoch);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.phase,
                r.lr,
                r.train_loss,
                r.val_loss,
                r.val_dice,
                u8::from(saved)
            );
        }
        out
    }
}

/// Result of one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub best: Checkpoint,
    pub record: TrainRecord,
}

/// Result of both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub phase1: Checkpoint,
    pub phase2: Checkpoint,
    pub record: TrainRecord,
}

/// Validation loss (batch Dice over all validation voxels, whole-volume
/// inference) and mean post-processed validation Dice.
pub fn validate(params: &NetParams, val: &[LabeledCase]) -> Result<(f64, f64)> {
    let mut probs = Vec::new();
    let mut targets = Vec::new();
    let mut dice = 0.0;
    for c in val {
        let p = forward_volume(params, c.image.dims(), c.image.voxels())?;
        let pred = postprocess(&threshold(&p, &c.gt)?);
        dice += dice_score(&pred, &c.gt)?;
        probs.extend(p);
        targets.extend_from_slice(c.gt.voxels());
    }
    Ok((batch_dice(&probs, &targets)?, dice / val.len() as f64))
}

fn threshold(probs: &[f64], like: &BinaryMask3D) -> Result<BinaryMask3D> {
    let v = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
    BinaryMask3D::new(like.dims(), like.spacing(), v)
}

fn build_blocks(config: &TrainConfig, data: &TrainData) -> Result<Vec<Patch>> {
    let mut blocks = Vec::new();
    for c in &data.train {
        blocks.extend(extract_blocks(
            &c.image,
            &c.label,
            config.patch,
            config.effective_stride(),
        )?);
    }
    if blocks.is_empty() {
        return Err(Error::NoBlocks);
    }
    Ok(blocks)
}

fn make_optimizer(config: &TrainConfig) -> Box<dyn Optimizer> {
    match config.optimizer {
        OptimizerKind::Adam => Box::new(AdamState::new()),
        OptimizerKind::Sgd => Box::new(SgdMomentum::new(config.momentum)),
    }
}

fn run_phase(
    config: &TrainConfig,
    data: &TrainData,
    phase: Phase,
    start: NetParams,
    fallback: Option<Checkpoint>,
    epochs: usize,
) -> Result<PhaseOutcome> {
    config.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidConfig(
            "training needs at least one training and one validation case".into(),
        ));
    }
    let mut record = TrainRecord::default();
    let mut best = fallback;
    if epochs == 0 {
        let best = best.unwrap_or(Checkpoint {
            params: start,
            epoch: 0,
            val_score: 0.0,
        });
        return Ok(PhaseOutcome { best, record });
    }
    let blocks = build_blocks(config, data)?;
    let label = match phase {
        Phase::Plateau => "batches-phase1",
        Phase::PlateauWithRestarts => "batches-phase2",
    };
    let mut batch_rng = Rng::labeled(config.seed, label);
    let mut schedule = ScheduleState::new(config.schedule(), phase)?;
    let mut optimizer = make_optimizer(config);
    let mut params = start;
    for epoch in 1..=epochs {
        let lr = schedule.lr();
        let mut loss_sum = 0.0;
        for iteration in 0..config.iterations_per_epoch {
            let batch = sample_batch(&blocks, config.batch_size, &mut batch_rng)?;
            let (probs, cache) = forward(&params, &batch)?;
            let (t, s) = (batch.targets(), batch.selections());
            let loss = selective_batch_dice(LossInput {
                r: &probs,
                t: &t,
                s: &s,
            })
            .map_err(|e| {
                Error::NonFinite(format!(
                    "phase {} epoch {epoch} iteration {iteration}: {e}",
                    phase.number()
                ))
            })?;
            let grads = backward(&params, &cache, &loss.gradient)?;
            optimizer.step(&mut params, &grads, lr)?;
            if !loss.value.is_finite() || !params.all_finite() {
                return Err(Error::NonFinite(format!(
                    "phase {} epoch {epoch} iteration {iteration}: loss {}",
                    phase.number(),
                    loss.value
                )));
            }
            loss_sum += loss.value;
        }
        let (val_loss, val_dice) = validate(&params, &data.val)?;
        schedule.epoch_end(val_loss)?;
        record.rows.push(EpochRow {
            epoch,
            phase: phase.number(),
            lr,
            train_loss: loss_sum / config.iterations_per_epoch as f64,
            val_loss,
            val_dice,
        });
        if best.as_ref().is_none_or(|b| val_dice > b.val_score) {
            record.checkpoints.push(CheckpointEvent {
                phase: phase.number(),
                epoch,
                val_dice,
            });
            best = Some(Checkpoint {
                params: params.clone(),
                epoch,
                val_score: val_dice,
            });
        }
    }
    Ok(PhaseOutcome {
        best: best.expect("at least one epoch ran"),
        record,
    })
}

/// Phase 1 from freshly initialized weights.
pub fn train_phase1(config: &TrainConfig, data: &TrainData) -> Result<PhaseOutcome> {
    let params = init_params(&mut Rng::labeled(config.seed, "init"));
    run_phase(config, data, Phase::Plateau, params, None, config.epochs_phase1)
}

/// Phase 2 from the phase-1 best weights; returns them unchanged unless
/// validation Dice improves on their score.
pub fn train_phase2(
    config: &TrainConfig,
    data: &TrainData,
    phase1_best: &Checkpoint,
) -> Result<PhaseOutcome> {
    if !phase1_best.params.all_finite() {
        return Err(Error::MalformedCheckpoint("non-finite phase-1 weights".into()));
    }
    run_phase(
        config,
        data,
        Phase::PlateauWithRestarts,
        phase1_best.params.clone(),
        Some(phase1_best.clone()),
        config.epochs_phase2,
    )
}

pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    let p1 = train_phase1(config, data)?;
    let p2 = train_phase2(config, data, &p1.best)?;
    let mut record = p1.record;
    record.extend(p2.record);
    Ok(TrainOutcome {
        phase1: p1.best,
        phase2: p2.best,
        record,
    })
}

/// Averages overlapping tile outputs over a grid. `tile` receives the tile
/// origin and returns one value per tile voxel (x-fastest).
pub fn tile_average(
    dims: Dims,
    patch: Dims,
    stride: Dims,
    mut tile: impl FnMut((usize, usize, usize)) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if !patch.fits_in(&dims) || patch.is_empty() {
        return Err(Error::PatchTooLarge { patch, volume: dims });
    }
    if stride.is_empty() {
        return Err(Error::InvalidStride(stride));
    }
    let mut sum = vec![0.0; dims.len()];
    let mut count = vec![0u32; dims.len()];
    for &z0 in &block_starts(dims.z, patch.z, stride.z) {
        for &y0 in &block_starts(dims.y, patch.y, stride.y) {
            for &x0 in &block_starts(dims.x, patch.x, stride.x) {
                let values = tile((x0, y0, z0))?;
                if values.len() != patch.len() {
                    return Err(Error::LengthMismatch(values.len(), patch.len()));
                }
                let mut k = 0;
                for dz in 0..patch.z {
                    for dy in 0..patch.y {
                        let row = dims.index(x0, y0 + dy, z0 + dz);
                        for dx in 0..patch.x {
                            sum[row + dx] += values[k];
                            count[row + dx] += 1;
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(sum.iter().zip(&count).map(|(&s, &c)| s / f64::from(c)).collect())
}

/// Overlap-averaged probabilities from half-patch-stride tiles with an
/// all-ones mask channel.
pub fn predict_probabilities(params: &NetParams, image: &Volume3D, patch: Dims) -> Result<Vec<f64>> {
    let dims = image.dims();
    let mut buf = vec![0f32; patch.len()];
    tile_average(dims, patch, half(patch), |(x0, y0, z0)| {
        let mut k = 0;
        for dz in 0..patch.z {
            for dy in 0..patch.y {
                let row = dims.index(x0, y0 + dy, z0 + dz);
                buf[k..k + patch.x].copy_from_slice(&image.voxels()[row..row + patch.x]);
                k += patch.x;
            }
        }
        forward_volume(params, patch, &buf)
    })
}

/// Segmentation: tiled probabilities, strict `> 0.5` threshold, then hole
/// filling and main-component extraction.
pub fn predict(params: &NetParams, image: &Volume3D, patch: Dims) -> Result<BinaryMask3D> {
    let probs = predict_probabilities(params, image, patch)?;
    let v = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
    Ok(postprocess(&BinaryMask3D::new(image.dims(), image.spacing(), v)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Blocks;
    use crate::phantom::{generate_dataset, PhantomSpec};
    use crate::volume::Spacing;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            dims: Dims::new(16, 16, 16),
            size_range: (0.3, 0.45),
            ..PhantomSpec::default()
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            patch: Dims::new(8, 8, 8),
            batch_size: 2,
            epochs_phase1: 2,
            epochs_phase2: 2,
            iterations_per_epoch: 2,
            percentage: 0.3,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn small_data(config: &TrainConfig) -> TrainData {
        let cases: Vec<LabeledCase> = generate_dataset(&small_spec(), 5, &Rng::new(9, 0))
            .unwrap()
            .into_iter()
            .map(|(image, gt)| LabeledCase { image, gt })
            .collect();
        TrainData {
            train: annotate_cases(&cases[..3], config).unwrap(),
            val: cases[3..].to_vec(),
        }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"regime":"full","patch":[16,16,8]}"#).unwrap();
        assert_eq!(c.regime, Regime::Full);
        assert_eq!(c.patch, Dims::new(16, 16, 8));
        assert_eq!(c.effective_stride(), Dims::new(8, 8, 4));
        assert_eq!(c.effective_percentage(), 1.0);
        assert_eq!(c.batch_size, 8);
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        for p in [0.0, 1.0, -0.5, f64::NAN] {
            let c = TrainConfig {
                percentage: p,
                ..TrainConfig::default()
            };
            assert!(c.validate().is_err(), "{p}");
        }
        let full = TrainConfig {
            regime: Regime::Full,
            percentage: 0.0,
            ..TrainConfig::default()
        };
        assert!(full.validate().is_ok());
    }

    #[test]
    fn zero_epochs_return_initial_params() {
        let config = TrainConfig {
            epochs_phase1: 0,
            epochs_phase2: 0,
            ..small_config()
        };
        let data = small_data(&config);
        let out = train_phase1(&config, &data).unwrap();
        assert_eq!(out.best.params, init_params(&mut Rng::labeled(config.seed, "init")));
        assert!(out.record.rows.is_empty());
        let p2 = train_phase2(&config, &data, &out.best).unwrap();
        assert_eq!(p2.best, out.best);
    }

    #[test]
    fn phases_are_deterministic_and_monotone() {
        let config = small_config();
        let data = small_data(&config);
        let a = train(&config, &data).unwrap();
        let b = train(&config, &data).unwrap();
        assert_eq!(a.record.to_csv(), b.record.to_csv());
        assert_eq!(a.phase2, b.phase2);
        assert_eq!(a.record.rows.len(), 4);
        assert_eq!(a.record.rows[2].phase, 2);
        assert_eq!(a.record.rows[2].lr, config.initial_lr);
        assert!(a.phase2.val_score >= a.phase1.val_score);
        let scores: Vec<f64> = a.record.checkpoints.iter().map(|c| c.val_dice).collect();
        assert!(scores.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn empty_validation_is_rejected() {
        let config = small_config();
        let mut data = small_data(&config);
        data.val.clear();
        assert!(train_phase1(&config, &data).is_err());
    }

    #[test]
    fn borders_off_changes_labels_not_plans() {
        let on = small_config();
        let off = TrainConfig {
            borders: false,
            ..on.clone()
        };
        let cases: Vec<LabeledCase> = generate_dataset(&small_spec(), 2, &Rng::new(1, 0))
            .unwrap()
            .into_iter()
            .map(|(image, gt)| LabeledCase { image, gt })
            .collect();
        let a = annotate_cases(&cases, &on).unwrap();
        let b = annotate_cases(&cases, &off).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cost, y.cost);
            assert!(x.label.annotated_slices() > y.label.annotated_slices());
            assert_eq!(y.label.annotated_slices(), y.cost);
        }
    }

    #[test]
    fn tile_average_two_tiles() {
        // 1D along x: tiles of 2 at stride 1 over 3 voxels; voxel 1 is shared
        let dims = Dims::new(3, 1, 1);
        let avg = tile_average(dims, Dims::new(2, 1, 1), Dims::new(1, 1, 1), |(x0, _, _)| {
            Ok(if x0 == 0 { vec![0.2, 0.4] } else { vec![0.8, 0.1] })
        })
        .unwrap();
        assert!((avg[1] - 0.6).abs() < 1e-15);
        assert_eq!(avg[0], 0.2);
        assert_eq!(avg[2], 0.1);
    }

    #[test]
    fn constant_half_output_predicts_empty() {
        // all-zero weights give sigmoid(0) = 0.5 everywhere
        let image = Volume3D::zeros(Dims::new(8, 8, 8), Spacing::isotropic()).unwrap();
        let mask = predict(&Blocks::zeros(), &image, Dims::new(4, 4, 4)).unwrap();
        assert!(mask.is_empty());
        let big = Dims::new(16, 8, 8);
        assert!(predict(&Blocks::zeros(), &image, big).is_err());
    }

    #[test]
    fn prediction_is_deterministic() {
        let data = small_data(&small_config());
        let params = init_params(&mut Rng::new(4, 4));
        let img = &data.val[0].image;
        let a = predict(&params, img, Dims::new(8, 8, 8)).unwrap();
        let b = predict(&params, img, Dims::new(8, 8, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_over_first_steps() {
        let config = small_config();
        let data = small_data(&config);
        let blocks = build_blocks(&config, &data).unwrap();
        for seed in 0..3 {
            let batch = sample_batch(&blocks, 4, &mut Rng::new(seed, 1)).unwrap();
            let mut params = init_params(&mut Rng::new(seed, 2));
            let mut opt = AdamState::new();
            let (t, s) = (batch.targets(), batch.selections());
            let mut losses = Vec::new();
            for _ in 0..6 {
                let (r, cache) = forward(&params, &batch).unwrap();
                let l = selective_batch_dice(LossInput { r: &r, t: &t, s: &s }).unwrap();
                losses.push(l.value);
                let g = backward(&params, &cache, &l.gradient).unwrap();
                opt.step(&mut params, &g, config.initial_lr).unwrap();
            }
            assert!(losses.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {losses:?}");
        }
    }
}
