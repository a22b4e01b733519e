//! Learning-rate schedule and parameter updates.
//!
//! Phase 1 reduces the rate on a validation plateau. Phase 2 does the same
//! and additionally restarts the rate at its initial value every
//! `restart_period` epochs, keeping optimizer moments ("warm" restart).
//!
//! Epochs are 1-based. The rate used in epoch 1 is `initial_lr`; the rate
//! used in epoch `e + 1` is what [`ScheduleState::epoch_end`] returns after
//! epoch `e`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Blocks, GradientSet, NetParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub initial_lr: f64,
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement required to reset the patience counter.
    pub threshold: f64,
    pub min_lr: f64,
    pub restart_period: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            initial_lr: 5e-4,
            factor: 0.5,
            patience: 10,
            threshold: 1e-4,
            min_lr: 1e-6,
            restart_period: 60,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad(format!("initial_lr {} must be > 0", self.initial_lr));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return bad(format!("factor {} outside (0, 1)", self.factor));
        }
        if !(self.min_lr.is_finite() && self.min_lr >= 0.0 && self.min_lr <= self.initial_lr) {
            return bad(format!("min_lr {} outside [0, initial_lr]", self.min_lr));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return bad(format!("threshold {} must be >= 0", self.threshold));
        }
        if self.restart_period == 0 {
            return bad("restart_period must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Plateau,
    PlateauWithRestarts,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Plateau => 1,
            Phase::PlateauWithRestarts => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    config: ScheduleConfig,
    phase: Phase,
    lr: f64,
    best: f64,
    since_improvement: usize,
    epoch: usize,
}

impl ScheduleState {
    pub fn new(config: ScheduleConfig, phase: Phase) -> Result<Self> {
        config.validate()?;
        Ok(ScheduleState {
            config,
            phase,
            lr: config.initial_lr,
            best: f64::INFINITY,
            since_improvement: 0,
            epoch: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Completed epochs in this phase.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Consumes a lower-is-better validation metric at the end of an epoch
    /// and returns the rate for the next epoch.
    pub fn epoch_end(&mut self, val_metric: f64) -> Result<f64> {
        if !val_metric.is_finite() {
            return Err(Error::NonFinite(format!("validation metric {val_metric}")));
        }
        self.epoch += 1;
        let improved = !self.best.is_finite()
            || val_metric < self.best - self.config.threshold * self.best.abs();
        if improved {
            self.best = val_metric;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement > self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.since_improvement = 0;
            }
        }
        if self.phase == Phase::PlateauWithRestarts && self.epoch.is_multiple_of(self.config.restart_period) {
            self.lr = self.config.initial_lr;
            self.since_improvement = 0;
        }
        Ok(self.lr)
    }
}

/// Replays a metric sequence; element `e` is the rate returned after epoch `e + 1`.
pub fn lr_trace(config: ScheduleConfig, phase: Phase, metrics: &[f64]) -> Result<Vec<f64>> {
    let mut s = ScheduleState::new(config, phase)?;
    metrics.iter().map(|&m| s.epoch_end(m)).collect()
}

/// A parameter update rule.
pub trait Optimizer {
    fn step(&mut self, params: &mut NetParams, grads: &GradientSet, lr: f64) -> Result<()>;
}

fn check_step(params: &Blocks, grads: &Blocks, state: &Blocks) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(state) {
        return Err(Error::ShapeMismatch);
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments co-indexed with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Blocks,
    v: Blocks,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            m: Blocks::zeros(),
            v: Blocks::zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One Adam update with bias correction over flat slices.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) {
    let t = step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

impl Optimizer for AdamState {
    fn step(&mut self, params: &mut NetParams, grads: &GradientSet, lr: f64) -> Result<()> {
        check_step(params, grads, &self.m)?;
        self.step += 1;
        let (m, v) = (self.m.blocks_mut(), self.v.blocks_mut());
        for (i, (p, g)) in params.blocks_mut().iter_mut().zip(grads.blocks()).enumerate() {
            adam_update(p, g, &mut m[i], &mut v[i], self.step, lr);
        }
        Ok(())
    }
}

/// Adam step returning the updated parameters.
pub fn adam_step(
    params: &NetParams,
    grads: &GradientSet,
    state: &AdamState,
    lr: f64,
) -> Result<(NetParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads, lr)?;
    Ok((p, s))
}

/// SGD with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Blocks,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum {
            momentum,
            velocity: Blocks::zeros(),
        }
    }
}

impl Optimizer for SgdMomentum {
    fn step(&mut self, params: &mut NetParams, grads: &GradientSet, lr: f64) -> Result<()> {
        check_step(params, grads, &self.velocity)?;
        let mu = self.momentum;
        for ((p, g), vel) in params
            .blocks_mut()
            .iter_mut()
            .zip(grads.blocks())
            .zip(self.velocity.blocks_mut())
        {
            for ((p, &g), vel) in p.iter_mut().zip(g).zip(vel.iter_mut()) {
                *vel = mu * *vel + g;
                *p -= lr * *vel;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::volume::Rng;

    #[test]
    fn improving_metric_keeps_rate() {
        let metrics: Vec<f64> = (0..30).map(|e| 1.0 - 0.01 * e as f64).collect();
        let trace = lr_trace(ScheduleConfig::default(), Phase::Plateau, &metrics).unwrap();
        assert!(trace.iter().all(|&lr| lr == 5e-4));
    }

    #[test]
    fn flat_metric_halves_after_patience_is_exceeded() {
        let trace = lr_trace(ScheduleConfig::default(), Phase::Plateau, &[0.5; 30]).unwrap();
        assert!(trace[..11].iter().all(|&lr| lr == 5e-4));
        assert!(trace[11..22].iter().all(|&lr| lr == 2.5e-4));
        assert_eq!(trace[22], 1.25e-4);
    }

    #[test]
    fn restarts_every_period() {
        let metrics: Vec<f64> = (0..130).map(|e| 0.5 + 0.001 * (e % 7) as f64).collect();
        let trace = lr_trace(ScheduleConfig::default(), Phase::PlateauWithRestarts, &metrics).unwrap();
        assert_eq!(trace[59], 5e-4);
        assert_eq!(trace[119], 5e-4);
        assert!(trace[58] < 5e-4);
    }

    #[test]
    fn floor_at_min_lr() {
        let cfg = ScheduleConfig {
            patience: 0,
            ..ScheduleConfig::default()
        };
        let trace = lr_trace(cfg, Phase::Plateau, &[1.0; 40]).unwrap();
        assert_eq!(*trace.last().unwrap(), 1e-6);
        assert!(trace.iter().all(|&lr| lr >= 1e-6));
    }

    #[test]
    fn rejects_non_finite_metric() {
        let mut s = ScheduleState::new(ScheduleConfig::default(), Phase::Plateau).unwrap();
        assert!(s.epoch_end(f64::NAN).is_err());
    }

    #[test]
    fn adam_two_steps_by_hand() {
        // g = 1 each step
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 1e-3);
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1
        let expect1 = -1e-3 * 1.0 / (1.0 + ADAM_EPS);
        assert!((p[0] - expect1).abs() < 1e-15);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 2, 1e-3);
        let m2: f64 = 0.9 * 0.1 + 0.1;
        let v2: f64 = 0.999 * 0.001 + 0.001;
        let step2 = 1e-3 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + ADAM_EPS);
        assert!((p[0] - (expect1 - step2)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_or_zero_rate_leaves_params() {
        let p0 = init_params(&mut Rng::new(1, 0));
        let (p1, s1) = adam_step(&p0, &Blocks::zeros(), &AdamState::new(), 1e-3).unwrap();
        assert_eq!(p1, p0);
        assert_eq!(s1.step_count(), 1);
        let mut g = Blocks::zeros();
        g.blocks_mut()[0][0] = 1.0;
        let (p2, _) = adam_step(&p0, &g, &AdamState::new(), 0.0).unwrap();
        assert_eq!(p2, p0);
    }

    #[test]
    fn rejects_bad_gradients() {
        let p = Blocks::zeros();
        let mut g = Blocks::zeros();
        g.blocks_mut()[1][0] = f64::NAN;
        assert!(adam_step(&p, &g, &AdamState::new(), 1e-3).is_err());
    }

    #[test]
    fn sgd_momentum_moves_against_gradient() {
        let mut p = Blocks::zeros();
        let mut g = Blocks::zeros();
        g.blocks_mut()[5][0] = 2.0;
        let mut opt = SgdMomentum::new(0.9);
        opt.step(&mut p, &g, 0.1).unwrap();
        opt.step(&mut p, &g, 0.1).unwrap();
        assert!((p.bias(2)[0] + (0.2 + 0.1 * (0.9 * 2.0 + 2.0))).abs() < 1e-12);
    }
}
