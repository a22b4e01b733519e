//! Deterministic random streams.
//!
//! The generator is PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`). A `(seed, stream)`
//! pair selects both the LCG increment (the stream) and a SplitMix64-scrambled
//! starting state, so identical pairs replay identical sequences on every
//! platform. Uniform reals take the top 53 bits of a 64-bit draw; bounded
//! integers use Lemire's widening-multiply rejection method; normals use the
//! Box–Muller transform. None of these depend on `rand` version behaviour.

use rand_core::Rng as _;
use rand_pcg::Pcg64;

use crate::error::{Error, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a label, used to name derived streams.
pub fn stream_label(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A seeded, single-owner random stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: Pcg64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let hi = splitmix64(seed ^ splitmix64(stream));
        let lo = splitmix64(seed.wrapping_add(0x632b_e59b_d9b4_e019) ^ stream.rotate_left(17));
        let state = (u128::from(hi) << 64) | u128::from(lo);
        let increment = (u128::from(splitmix64(stream)) << 64) | u128::from(stream);
        Rng {
            seed,
            stream,
            inner: Pcg64::new(state, increment),
        }
    }

    /// A stream named by a label, e.g. `Rng::labeled(seed, "init")`.
    pub fn labeled(seed: u64, label: &str) -> Self {
        Rng::new(seed, stream_label(label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream that depends only on `(seed, stream, index)`, never on
    /// how many values this stream has already produced.
    pub fn derive(&self, index: u64) -> Rng {
        Rng::new(self.seed, splitmix64(self.stream ^ splitmix64(index.wrapping_add(1))))
    }

    /// A fresh stream keyed by label and index.
    pub fn derive_labeled(&self, label: &str, index: u64) -> Rng {
        Rng::new(self.seed, splitmix64(self.stream ^ stream_label(label))).derive(index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform integer in [lo, hi], both inclusive.
    pub fn next_int(&mut self, lo: i64, hi: i64) -> Result<i64> {
        if lo > hi {
            return Err(Error::EmptyRange { lo, hi });
        }
        let span = (hi as i128 - lo as i128 + 1) as u128;
        if span > u128::from(u64::MAX) {
            return Ok(self.next_u64() as i64);
        }
        Ok((lo as i128 + self.below(span as u64) as i128) as i64)
    }

    /// Uniform in [0, n); `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal via Box–Muller (one value per call).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_range() {
        let mut rng = Rng::new(1, 2);
        for _ in 0..100 {
            assert_eq!(rng.next_int(5, 5).unwrap(), 5);
        }
    }

    #[test]
    fn empty_range_errors() {
        let mut rng = Rng::new(1, 2);
        assert!(matches!(
            rng.next_int(3, 2),
            Err(Error::EmptyRange { lo: 3, hi: 2 })
        ));
    }

    #[test]
    fn replay_is_identical() {
        let mut a = Rng::new(42, 7);
        let mut b = Rng::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = Rng::new(42, 0);
        let mut b = Rng::new(42, 1);
        let xs: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        let same = xs.iter().zip(&ys).filter(|(x, y)| x == y).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn int_bounds_are_inclusive() {
        let mut rng = Rng::new(3, 3);
        let mut seen = [false; 4];
        for _ in 0..400 {
            let v = rng.next_int(-1, 2).unwrap();
            assert!((-1..=2).contains(&v));
            seen[(v + 1) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(9, 0);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let u = rng.next_uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn derive_ignores_consumed_state() {
        let base = Rng::new(5, 11);
        let mut used = base.clone();
        used.next_u64();
        assert_eq!(base.derive(3).next_u64(), used.derive(3).next_u64());
        assert_ne!(base.derive(3).next_u64(), base.derive(4).next_u64());
    }
}
