//! Synthetic labelled volumes: a union of one to three rotated ellipsoids
//! with a smooth radial interior profile, plane-wave background texture and
//! Gaussian noise.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3D, Dims, Rng, Spacing, Volume3D};

/// Radial profile slope; chosen so the profile averages to exactly 1 over a
/// solid ellipsoid (E[rho^2] = 3/5).
const PROFILE_SLOPE: f64 = 0.5;
const MIN_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    /// Upper bound on the number of lobes; each phantom draws 1..=max_lobes.
    pub max_lobes: u32,
    /// Main-lobe semi-axis as a fraction of the half-extent of each axis.
    pub size_range: (f64, f64),
    pub contrast: f64,
    /// Relative per-case contrast variation: each phantom scales `contrast`
    /// by a factor drawn from [1 - jitter, 1 + jitter].
    #[serde(default)]
    pub contrast_jitter: f64,
    pub noise_sigma: f64,
    pub texture_amplitude: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: Dims::new(48, 48, 32),
            spacing: Spacing::new(1.5, 1.5, 3.0).expect("valid spacing"),
            max_lobes: 3,
            size_range: (0.3, 0.6),
            contrast: 1.0,
            contrast_jitter: 0.0,
            noise_sigma: 0.3,
            texture_amplitude: 0.3,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPhantom(m));
        let d = self.dims;
        if d.x < MIN_DIM || d.y < MIN_DIM || d.z < MIN_DIM {
            return bad(format!("dims {d} must be >= {MIN_DIM} on every axis"));
        }
        if !(1..=3).contains(&self.max_lobes) {
            return bad(format!("lobe count {} outside [1, 3]", self.max_lobes));
        }
        let (lo, hi) = self.size_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad(format!("size range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return bad(format!("contrast {} must be > 0", self.contrast));
        }
        if !(self.contrast_jitter.is_finite() && (0.0..1.0).contains(&self.contrast_jitter)) {
            return bad(format!("contrast jitter {} outside [0, 1)", self.contrast_jitter));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.texture_amplitude.is_finite() && self.texture_amplitude >= 0.0) {
            return bad(format!(
                "texture amplitude {} must be >= 0",
                self.texture_amplitude
            ));
        }
        // The largest possible lobe, at any in-plane rotation, must leave one
        // empty voxel layer on both sides of every axis.
        let r_xy = hi * d.x.max(d.y) as f64 / 2.0;
        let r_z = hi * d.z as f64 / 2.0;
        if 2.0 * r_xy + 3.0 > d.x.min(d.y) as f64 || 2.0 * r_z + 3.0 > d.z as f64 {
            return bad(format!("size range upper bound {hi} cannot fit inside {d}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Lobe {
    center: [f64; 3],
    radii: [f64; 3],
    cos: f64,
    sin: f64,
}

impl Lobe {
    /// Squared normalized radius of point `p`; <= 1 inside.
    fn rho2(&self, p: [f64; 3]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        (u / self.radii[0]).powi(2) + (v / self.radii[1]).powi(2) + (dz / self.radii[2]).powi(2)
    }

    /// Half-width of the axis-aligned bounding box.
    fn half_extent(&self) -> [f64; 3] {
        let (a, b) = (self.radii[0], self.radii[1]);
        [
            ((a * self.cos).powi(2) + (b * self.sin).powi(2)).sqrt(),
            ((a * self.sin).powi(2) + (b * self.cos).powi(2)).sqrt(),
            self.radii[2],
        ]
    }

    /// Moves the center so the lobe sits inside [1, dim - 2] on every axis.
    fn clamp_into(&mut self, dims: Dims) {
        let ext = self.half_extent();
        for (axis, &n) in dims.as_array().iter().enumerate() {
            let lo = ext[axis] + 1.0 + 1e-9;
            let hi = n as f64 - 2.0 - ext[axis] - 1e-9;
            self.center[axis] = self.center[axis].clamp(lo, hi.max(lo));
        }
    }
}

struct Wave {
    k: [f64; 3],
    phase: f64,
}

fn sample_lobes(spec: &PhantomSpec, rng: &mut Rng) -> Vec<Lobe> {
    let d = spec.dims.as_array();
    let (lo, hi) = spec.size_range;
    let count = rng.next_int(1, i64::from(spec.max_lobes)).expect("valid range") as usize;
    let angle = rng.uniform_range(0.0, std::f64::consts::PI);
    let radii = [0, 1, 2].map(|a| rng.uniform_range(lo, hi) * d[a] as f64 / 2.0);
    let mut main = Lobe {
        center: [0.0; 3],
        radii,
        cos: angle.cos(),
        sin: angle.sin(),
    };
    let ext = main.half_extent();
    for axis in 0..3 {
        let lo_c = ext[axis] + 1.0;
        let hi_c = d[axis] as f64 - 2.0 - ext[axis];
        // Stay within the middle part of the admissible range.
        let mid = 0.5 * (lo_c + hi_c);
        let half = 0.35 * (hi_c - lo_c).max(0.0);
        main.center[axis] = rng.uniform_range(mid - half, mid + half);
    }
    main.clamp_into(spec.dims);

    let mut lobes = vec![main];
    for _ in 1..count {
        // Offset direction on the unit sphere, expressed in main-lobe
        // normalized coordinates so the child center stays inside the main lobe.
        let (mut dir, mut norm) = ([0.0; 3], 0.0);
        while norm < 1e-6 {
            dir = [rng.next_normal(), rng.next_normal(), 0.5 * rng.next_normal()];
            norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        }
        let s = rng.uniform_range(0.4, 0.8) / norm;
        let (u, v, w) = (dir[0] * s * main.radii[0], dir[1] * s * main.radii[1], dir[2] * s * main.radii[2]);
        let center = [
            main.center[0] + main.cos * u - main.sin * v,
            main.center[1] + main.sin * u + main.cos * v,
            main.center[2] + w,
        ];
        let child_angle = rng.uniform_range(0.0, std::f64::consts::PI);
        let scale = [0, 1, 2].map(|_| rng.uniform_range(0.45, 0.75));
        let mut child = Lobe {
            center,
            radii: [0, 1, 2].map(|a| main.radii[a] * scale[a]),
            cos: child_angle.cos(),
            sin: child_angle.sin(),
        };
        child.clamp_into(spec.dims);
        lobes.push(child);
    }
    lobes
}

/// Generates one image/label pair.
pub fn generate_phantom(spec: &PhantomSpec, rng: &mut Rng) -> Result<(Volume3D, BinaryMask3D)> {
    spec.validate()?;
    let lobes = sample_lobes(spec, rng);
    let contrast = spec.contrast
        * rng.uniform_range(1.0 - spec.contrast_jitter, 1.0 + spec.contrast_jitter);
    let waves: Vec<Wave> = (0..3)
        .map(|_| {
            let wavelength = rng.uniform_range(8.0, 20.0);
            let (mut dir, mut norm) = ([0.0; 3], 0.0);
            while norm < 1e-6 {
                dir = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
                norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
            }
            let k = dir.map(|c| c / norm * std::f64::consts::TAU / wavelength);
            Wave {
                k,
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            }
        })
        .collect();

    let dims = spec.dims;
    let mut image = Vec::with_capacity(dims.len());
    let mut mask = Vec::with_capacity(dims.len());
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let p = [x as f64, y as f64, z as f64];
                let rho2 = lobes
                    .iter()
                    .map(|l| l.rho2(p))
                    .fold(f64::INFINITY, f64::min);
                let inside = rho2 <= 1.0;
                let texture: f64 = waves
                    .iter()
                    .map(|w| (w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase).sin())
                    .sum::<f64>()
                    * spec.texture_amplitude
                    / waves.len() as f64;
                let mut value = texture;
                if inside {
                    value += contrast * (1.0 + PROFILE_SLOPE * (0.6 - rho2));
                }
                if spec.noise_sigma > 0.0 {
                    value += spec.noise_sigma * rng.next_normal();
                }
                image.push(value as f32);
                mask.push(u8::from(inside));
            }
        }
    }
    let mask = BinaryMask3D::new(dims, spec.spacing, mask)?;
    if mask.is_empty() {
        return Err(Error::InvalidPhantom(
            "size range too small: no voxel center fell inside the structure".into(),
        ));
    }
    debug_assert!(mask.slice_is_empty(0) && mask.slice_is_empty(dims.z - 1));
    Ok((Volume3D::new(dims, spec.spacing, image)?, mask))
}

/// Phantoms for the given case indices; case `i` always comes from `rng.derive(i)`.
pub fn generate_cases(
    spec: &PhantomSpec,
    rng: &Rng,
    indices: Range<u64>,
) -> Result<Vec<(Volume3D, BinaryMask3D)>> {
    indices
        .map(|i| generate_phantom(spec, &mut rng.derive(i)))
        .collect()
}

/// `n` independent phantoms, cases 0..n.
pub fn generate_dataset(
    spec: &PhantomSpec,
    n: usize,
    rng: &Rng,
) -> Result<Vec<(Volume3D, BinaryMask3D)>> {
    if n == 0 {
        return Err(Error::InvalidPhantom("dataset size must be >= 1".into()));
    }
    generate_cases(spec, rng, 0..n as u64)
}
