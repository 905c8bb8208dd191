//! Statistical occlusion of rays crossing a forest-like occluder volume.
//!
//! The volume has height `l` and holds randomly placed occluders of size `o`.
//! `d` is the probability that a ray is blocked within one occluder size of
//! travel, so a nadir ray crossing the whole volume survives `l / o`
//! independent chances: `D̄ = 1 - (1 - d)^(l/o)`. An oblique ray at angle
//! `alpha` from nadir travels `l / cos(alpha)`, giving
//! `D̄_α = 1 - (1 - D̄)^(1/cos(alpha))`.
//!
//! [`mc_occlusion_oracle`] measures the same probabilities by casting rays
//! through explicitly generated occluder volumes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    /// Blocking probability per occluder size of travel, in `[0, 1)`.
    pub d: f64,
    /// Occluder diameter, m.
    pub o: f64,
    /// Height of the occluder volume, m.
    pub l: f64,
    /// Viewing angle from nadir, degrees in `[0, 90)`.
    pub alpha: f64,
}

impl OcclusionParams {
    pub fn new(d: f64, o: f64, l: f64, alpha: f64) -> Result<Self> {
        let params = OcclusionParams { d, o, l, alpha };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && (0.0..1.0).contains(&self.d)) {
            return Err(Error::domain(format!(
                "occluder density must lie in [0, 1), got {} (d = 1 is a fully opaque volume)",
                self.d
            )));
        }
        if !(self.o.is_finite() && self.o > 0.0) {
            return Err(Error::domain(format!("occluder size must be positive, got {}", self.o)));
        }
        if !(self.l.is_finite() && self.l >= 0.0) {
            return Err(Error::domain(format!("volume height must be non-negative, got {}", self.l)));
        }
        check_alpha(self.alpha)
    }

    /// Number of independent occluder layers a nadir ray crosses.
    pub fn layers(&self) -> f64 {
        self.l / self.o
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        OcclusionParams { alpha, ..self }
    }
}

/// A probability that a ray is blocked.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntegratedDensity(f64);

impl IntegratedDensity {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(IntegratedDensity(value))
        } else {
            Err(Error::domain(format!("occlusion probability must lie in [0, 1], got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Probability that the ray gets through.
    pub fn visibility(self) -> f64 {
        1.0 - self.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && (0.0..90.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::domain(format!("viewing angle must lie in [0, 90) degrees, got {alpha}")))
    }
}

/// `1 - (1 - p)^k`, evaluated without cancellation for small `p`.
fn survival_complement(p: f64, k: f64) -> f64 {
    (-(k * (-p).ln_1p()).exp_m1()).clamp(0.0, 1.0)
}

/// Occlusion probability of a nadir ray: `1 - (1 - d)^(l / o)`. `params.alpha` is ignored.
pub fn integrated_density(params: &OcclusionParams) -> Result<IntegratedDensity> {
    params.with_alpha(0.0).validate()?;
    IntegratedDensity::new(survival_complement(params.d, params.layers()))
}

/// Occlusion probability of a ray at `alpha` degrees given the nadir probability.
pub fn oblique_density(d_bar: IntegratedDensity, alpha: f64) -> Result<IntegratedDensity> {
    check_alpha(alpha)?;
    if d_bar.0 >= 1.0 {
        return Ok(IntegratedDensity(1.0));
    }
    IntegratedDensity::new(survival_complement(d_bar.0, 1.0 / alpha.to_radians().cos()))
}

/// Oblique occlusion probability straight from the volume parameters:
/// `1 - (1 - d)^(l / (cos(alpha) o))`.
pub fn oblique_density_direct(params: &OcclusionParams) -> Result<IntegratedDensity> {
    params.validate()?;
    let exponent = params.l / (params.alpha.to_radians().cos() * params.o);
    IntegratedDensity::new(survival_complement(params.d, exponent))
}

/// Rays handled by one worker; each chunk draws its own occluder volume.
const ORACLE_CHUNK: usize = 10_000;
/// Horizontal period of the generated volume, in occluder diameters.
const ORACLE_TILE: usize = 16;
pub const MIN_ORACLE_RAYS: usize = 10_000;

/// Fraction of `rays` random lines at `params.alpha` from nadir that hit at
/// least one occluder of a freshly generated volume.
///
/// Occluders are spheres of diameter `o` (they present the same disk to a ray
/// from any direction) whose centers form a Poisson process inside the slab
/// `0 <= z <= l`, horizontally periodic. The intensity is set so that a path
/// of length `o` is blocked with probability `d`. Every chunk of
/// [`ORACLE_CHUNK`] rays gets its own volume and RNG stream, so the result only
/// depends on `seed` and `rays`, never on thread scheduling.
pub fn mc_occlusion_oracle(seed: u64, params: &OcclusionParams, rays: usize) -> Result<f64> {
    params.validate()?;
    if rays < MIN_ORACLE_RAYS {
        return Err(Error::domain(format!(
            "the occlusion oracle needs at least {MIN_ORACLE_RAYS} rays, got {rays}"
        )));
    }
    let chunks = rays.div_ceil(ORACLE_CHUNK);
    let blocked: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let n = ORACLE_CHUNK.min(rays - chunk * ORACLE_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let volume = SphereVolume::generate(params, &mut rng);
            (0..n).filter(|_| volume.cast_random_ray(&mut rng)).count() as u64
        })
        .sum();
    Ok(blocked as f64 / rays as f64)
}

/// Periodic slab of spheres, expressed in units of the occluder diameter.
struct SphereVolume {
    height: f64,
    radius: f64,
    tan_alpha: f64,
    cos_alpha: f64,
    sin_alpha: f64,
    layers: usize,
    /// `offsets[layer * TILE² + cell]..offsets[.. + 1]` indexes `centers`.
    offsets: Vec<u32>,
    centers: Vec<[f64; 3]>,
}

impl SphereVolume {
    fn generate(params: &OcclusionParams, rng: &mut ChaCha8Rng) -> Self {
        let height = params.layers();
        let radius = 0.5;
        let tile = ORACLE_TILE as f64;
        let layers = (height.ceil() as usize).max(1);
        // Poisson intensity such that the expected hit count over unit path length is -ln(1 - d).
        let cross_section = PI * radius * radius;
        let intensity = -(1.0 - params.d).ln() / cross_section;
        let mean = intensity * tile * tile * height;
        let count = if mean > 0.0 {
            Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
        } else {
            0
        };

        let mut raw: Vec<[f64; 3]> = (0..count)
            .map(|_| {
                [
                    rng.random::<f64>() * tile,
                    rng.random::<f64>() * tile,
                    rng.random::<f64>() * height,
                ]
            })
            .collect();
        let cells_per_layer = ORACLE_TILE * ORACLE_TILE;
        let key = |c: &[f64; 3]| {
            let layer = (c[2] as usize).min(layers - 1);
            let cx = (c[0] as usize).min(ORACLE_TILE - 1);
            let cy = (c[1] as usize).min(ORACLE_TILE - 1);
            layer * cells_per_layer + cy * ORACLE_TILE + cx
        };
        raw.sort_by_key(key);
        let mut offsets = vec![0u32; layers * cells_per_layer + 1];
        for c in &raw {
            offsets[key(c) + 1] += 1;
        }
        for i in 1..offsets.len() {
            offsets[i] += offsets[i - 1];
        }

        let alpha = params.alpha.to_radians();
        SphereVolume {
            height,
            radius,
            tan_alpha: alpha.tan(),
            cos_alpha: alpha.cos(),
            sin_alpha: alpha.sin(),
            layers,
            offsets,
            centers: raw,
        }
    }

    fn cast_random_ray(&self, rng: &mut ChaCha8Rng) -> bool {
        let tile = ORACLE_TILE as f64;
        let entry = [rng.random::<f64>() * tile, rng.random::<f64>() * tile];
        let azimuth = rng.random::<f64>() * 2.0 * PI;
        self.blocks(entry, azimuth)
    }

    /// Whether the line entering the top of the slab at `entry` and heading
    /// down at the volume's angle along `azimuth` passes within one radius of
    /// any sphere center.
    fn blocks(&self, entry: [f64; 2], azimuth: f64) -> bool {
        let (sin_az, cos_az) = azimuth.sin_cos();
        // Unit direction of travel (downwards).
        let dir = [self.sin_alpha * cos_az, self.sin_alpha * sin_az, -self.cos_alpha];
        let origin = [entry[0], entry[1], self.height];
        let at_height = |z: f64| {
            let run = (self.height - z) * self.tan_alpha;
            [entry[0] + run * cos_az, entry[1] + run * sin_az]
        };
        let r2 = self.radius * self.radius;
        let cells_per_layer = ORACLE_TILE * ORACLE_TILE;

        for layer in (0..self.layers).rev() {
            let z_lo = layer as f64 - self.radius;
            let z_hi = (layer + 1) as f64 + self.radius;
            let a = at_height(z_lo);
            let b = at_height(z_hi);
            let x0 = (a[0].min(b[0]) - self.radius).floor() as i64;
            let x1 = (a[0].max(b[0]) + self.radius).floor() as i64;
            let y0 = (a[1].min(b[1]) - self.radius).floor() as i64;
            let y1 = (a[1].max(b[1]) + self.radius).floor() as i64;
            for gy in y0..=y1 {
                let wy = gy.rem_euclid(ORACLE_TILE as i64);
                let shift_y = (gy - wy) as f64;
                for gx in x0..=x1 {
                    let wx = gx.rem_euclid(ORACLE_TILE as i64);
                    let shift_x = (gx - wx) as f64;
                    let cell = layer * cells_per_layer + wy as usize * ORACLE_TILE + wx as usize;
                    let range = self.offsets[cell] as usize..self.offsets[cell + 1] as usize;
                    for c in &self.centers[range] {
                        let rel = [c[0] + shift_x - origin[0], c[1] + shift_y - origin[1], c[2] - origin[2]];
                        let along = rel[0] * dir[0] + rel[1] * dir[1] + rel[2] * dir[2];
                        let dist2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2] - along * along;
                        if dist2 <= r2 {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}
