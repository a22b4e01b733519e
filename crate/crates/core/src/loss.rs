//! Batch Dice loss and its selective variant restricted to annotated voxels.
//!
//! Both are computed jointly over every voxel of the minibatch (not averaged
//! per patch), with sequential 64-bit accumulation.
//!
//! With `A = sum s_i t_i r_i` and `B = sum s_i (t_i + r_i)`:
//!
//! ```text
//! L       = -(2A + eps) / (B + eps)
//! dL/dr_j = -(2 t_j (B + eps) - (2A + eps)) / (B + eps)^2     if s_j = 1
//!         = 0                                                if s_j = 0
//! ```
//!
//! The two losses share a name in the literature; here the unmasked one is
//! [`batch_dice`] and the masked one [`selective_batch_dice`].

use crate::error::{Error, Result};

/// Smoothing term added to numerator and denominator. Makes an empty target
/// against an empty prediction a perfect score (-1).
pub const DICE_EPS: f64 = 1e-6;

/// Per-voxel loss inputs for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    /// Predicted foreground probabilities.
    pub r: &'a [f64],
    /// Targets in {0, 1}.
    pub t: &'a [u8],
    /// Selection flags in {0, 1}.
    pub s: &'a [u8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// dL/dr, zero wherever s = 0.
    pub gradient: Vec<f64>,
}

fn check_probabilities(r: &[f64]) -> Result<()> {
    match r.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::ProbabilityRange {
            index,
            value: r[index],
        }),
        None => Ok(()),
    }
}

fn check_binary(v: &[u8]) -> Result<()> {
    match v.iter().position(|&x| x > 1) {
        Some(index) => Err(Error::NonBinaryMask {
            index,
            value: f64::from(v[index]),
        }),
        None => Ok(()),
    }
}

/// Batch Dice loss over every voxel.
pub fn batch_dice(r: &[f64], t: &[u8]) -> Result<f64> {
    if r.len() != t.len() {
        return Err(Error::LengthMismatch(r.len(), t.len()));
    }
    check_probabilities(r)?;
    check_binary(t)?;
    let (mut inter, mut sum_t, mut sum_r) = (0.0f64, 0.0f64, 0.0f64);
    for (&ri, &ti) in r.iter().zip(t) {
        let ti = f64::from(ti);
        inter += ti * ri;
        sum_t += ti;
        sum_r += ri;
    }
    Ok(-(2.0 * inter + DICE_EPS) / (sum_t + sum_r + DICE_EPS))
}

/// Batch Dice loss over selected voxels only, with its gradient.
pub fn selective_batch_dice(input: LossInput<'_>) -> Result<LossOutput> {
    let LossInput { r, t, s } = input;
    if r.len() != t.len() {
        return Err(Error::LengthMismatch(r.len(), t.len()));
    }
    if r.len() != s.len() {
        return Err(Error::LengthMismatch(r.len(), s.len()));
    }
    check_probabilities(r)?;
    check_binary(t)?;
    check_binary(s)?;
    let (mut a, mut sum_t, mut sum_r, mut selected) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for ((&ri, &ti), &si) in r.iter().zip(t).zip(s) {
        if si == 1 {
            let ti = f64::from(ti);
            a += ti * ri;
            sum_t += ti;
            sum_r += ri;
            selected += 1;
        }
    }
    if selected == 0 {
        return Err(Error::EmptySelection);
    }
    let num = 2.0 * a + DICE_EPS;
    let den = sum_t + sum_r + DICE_EPS;
    let den2 = den * den;
    let gradient = t
        .iter()
        .zip(s)
        .map(|(&ti, &si)| {
            if si == 1 {
                -(2.0 * f64::from(ti) * den - num) / den2
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossOutput {
        value: -num / den,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let t = [1, 0, 1, 1, 0];
        let r: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
        let v = batch_dice(&r, &t).unwrap();
        assert!((v + 1.0).abs() < DICE_EPS / 3.0);
    }

    #[test]
    fn hand_evaluated_eq1() {
        // eps-free value -2/3; eps shifts it by < 1e-6
        let v = batch_dice(&[1.0, 0.0, 0.0, 0.0], &[1, 1, 0, 0]).unwrap();
        assert!((v + 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_versus_empty_is_perfect() {
        assert_eq!(batch_dice(&[0.0; 4], &[0; 4]).unwrap(), -1.0);
    }

    #[test]
    fn hand_evaluated_eq2() {
        let out = selective_batch_dice(LossInput {
            r: &[1.0, 0.0, 0.0, 0.0],
            t: &[1, 1, 0, 0],
            s: &[1, 0, 1, 1],
        })
        .unwrap();
        assert!((out.value + 1.0).abs() < 1e-6);
        assert_eq!(out.gradient[1], 0.0);
    }

    #[test]
    fn unselected_voxels_do_not_matter() {
        let t = [1, 0, 1, 0, 1];
        let s = [1, 1, 0, 1, 0];
        let mut r = vec![0.3, 0.6, 0.5, 0.2, 0.9];
        let base = selective_batch_dice(LossInput { r: &r, t: &t, s: &s }).unwrap();
        assert_eq!(base.gradient[2], 0.0);
        assert_eq!(base.gradient[4], 0.0);
        for delta in [-0.1, 0.1] {
            r[2] = 0.5 + delta;
            let v = selective_batch_dice(LossInput { r: &r, t: &t, s: &s }).unwrap().value;
            assert_eq!(v, base.value);
        }
    }

    #[test]
    fn batch_loss_differs_from_per_patch_average() {
        // patch 1: perfect small structure; patch 2: empty target, one false positive
        let r1 = [1.0, 0.0];
        let t1 = [1, 0];
        let r2 = [1.0, 0.0];
        let t2 = [0, 0];
        let avg = 0.5 * (batch_dice(&r1, &t1).unwrap() + batch_dice(&r2, &t2).unwrap());
        let joint = batch_dice(&[r1, r2].concat(), &[t1, t2].concat()).unwrap();
        // per-patch: (-1 + ~0) / 2 ~ -0.5; joint: -2/3
        assert!((avg + 0.5).abs() < 1e-5, "{avg}");
        assert!((joint + 2.0 / 3.0).abs() < 1e-6, "{joint}");
    }

    #[test]
    fn input_errors() {
        assert!(matches!(batch_dice(&[0.5], &[1, 0]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(
            batch_dice(&[1.5], &[1]),
            Err(Error::ProbabilityRange { index: 0, .. })
        ));
        assert!(matches!(
            selective_batch_dice(LossInput {
                r: &[0.5, 0.5],
                t: &[1, 0],
                s: &[0, 0]
            }),
            Err(Error::EmptySelection)
        ));
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, Vec<u8>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..=1.0, n),
                prop::collection::vec(0u8..=1, n),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #[test]
        fn value_in_range((r, t, s) in case()) {
            prop_assume!(s.contains(&1));
            let v = selective_batch_dice(LossInput { r: &r, t: &t, s: &s }).unwrap().value;
            prop_assert!((-1.0..=0.0).contains(&v));
        }

        #[test]
        fn permutation_invariant((r, t, s) in case(), seed in any::<u64>()) {
            prop_assume!(s.contains(&1));
            let mut rng = crate::volume::Rng::new(seed, 0);
            let mut idx: Vec<usize> = (0..r.len()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.index(i + 1));
            }
            let pr: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
            let pt: Vec<u8> = idx.iter().map(|&i| t[i]).collect();
            let ps: Vec<u8> = idx.iter().map(|&i| s[i]).collect();
            let a = selective_batch_dice(LossInput { r: &r, t: &t, s: &s }).unwrap().value;
            let b = selective_batch_dice(LossInput { r: &pr, t: &pt, s: &ps }).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
