//! Timing and equivalence checks for the two integration paths.
//!
//! Each timed integral is computed from scratch: the classical path runs one
//! geometry pass per frame and the deferred path runs one per integral, as it
//! does when the center pose moves between consecutive integrals. Everything
//! runs on the calling thread.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Pose;
use crate::dem::{Dem, Extent};
use crate::error::{Error, Result};
use crate::integral::{integrate_classical, integrate_deferred, GeometryCache, IntegralImage, IntegralSettings};
use crate::scene::SingleImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Renderer {
    Classical,
    Deferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub renderer: Renderer,
    pub n: usize,
    pub vertices: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPlan {
    pub repetitions: usize,
    pub warmup: usize,
    /// Output resolution of the timed integrals.
    pub resolution: usize,
    /// Resolution of the synthetic input frames.
    pub frame_resolution: usize,
    pub fov: f64,
    pub altitude: f64,
    /// Spacing of the synthetic frames along x, m.
    pub spacing: f64,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            repetitions: 10,
            warmup: 3,
            resolution: 1024,
            frame_resolution: 256,
            fov: 43.10,
            altitude: 35.0,
            spacing: 0.92,
        }
    }
}

/// Ground area a bench DEM spans: every frame footprint with some margin.
fn bench_extent(plan: &BenchPlan, n: usize) -> Result<Extent> {
    let footprint = 2.0 * plan.altitude * (plan.fov.to_radians() / 2.0).tan();
    let along = footprint + n as f64 * plan.spacing + 4.0;
    Extent::centered(along, footprint + 4.0)
}

/// `n` frames of random texture spaced along x around the origin at the bench altitude.
pub fn synthetic_frames(n: usize, plan: &BenchPlan, seed: u64) -> Vec<SingleImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = plan.frame_resolution;
    (0..n)
        .map(|k| {
            let x = (k as f64 - (n as f64 - 1.0) / 2.0) * plan.spacing;
            let pixels = (0..res * res).map(|_| rng.random::<f32>()).collect();
            SingleImage {
                pixels,
                resolution: res,
                pose: Pose::new(x, 0.0, plan.altitude, k as f64),
                fov: plan.fov,
                outside_pixels: 0,
            }
        })
        .collect()
}

fn centroid(frames: &[SingleImage]) -> Pose {
    Pose::centroid(&frames.iter().map(|f| f.pose).collect::<Vec<_>>()).expect("bench frames are never empty")
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn time_once<T>(f: impl FnOnce() -> Result<T>) -> Result<f64> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Times both renderers for every `(vertex count, N)` pair.
///
/// Repetitions run round-robin over all settings, so slow drift in machine
/// speed spreads evenly over them instead of biasing whichever ran last.
pub fn bench_rendering(n_values: &[usize], vertex_counts: &[usize], plan: &BenchPlan, seed: u64) -> Result<Vec<BenchRow>> {
    if plan.repetitions < 2 {
        return Err(Error::domain("benchmarks need at least two repetitions"));
    }
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    if n_values.contains(&0) {
        return Err(Error::domain("an integral needs at least one frame"));
    }
    let frames = synthetic_frames(max_n, plan, seed);
    let settings = IntegralSettings { fov: plan.fov, resolution: plan.resolution };
    let extent = bench_extent(plan, max_n)?;
    let dems = vertex_counts
        .iter()
        .map(|&vertices| Dem::synthetic(&extent, vertices, 2.0, seed))
        .collect::<Result<Vec<_>>>()?;
    // The same frames at every N, centered on the window.
    let windows: Vec<(Vec<&SingleImage>, Pose)> = n_values
        .iter()
        .map(|&n| {
            let skip = (max_n - n) / 2;
            (frames[skip..skip + n].iter().collect(), centroid(&frames[skip..skip + n]))
        })
        .collect();
    let grid: Vec<(usize, usize)> = (0..dems.len()).flat_map(|d| (0..windows.len()).map(move |w| (d, w))).collect();
    let renderers = [Renderer::Classical, Renderer::Deferred];
    let run = |(d, w): (usize, usize), renderer: Renderer| {
        let (window, center) = &windows[w];
        time_once(|| match renderer {
            Renderer::Classical => integrate_classical(window, &dems[d], *center, settings),
            Renderer::Deferred => integrate_deferred(window, &dems[d], *center, settings, &mut GeometryCache::new()),
        })
    };
    for &setting in &grid {
        for renderer in renderers {
            for _ in 0..plan.warmup {
                run(setting, renderer)?;
            }
        }
    }
    let mut samples = vec![Vec::with_capacity(plan.repetitions); grid.len() * renderers.len()];
    for _ in 0..plan.repetitions {
        for (s, &setting) in grid.iter().enumerate() {
            for (r, &renderer) in renderers.iter().enumerate() {
                samples[s * renderers.len() + r].push(run(setting, renderer)?);
            }
        }
    }
    let mut rows = Vec::new();
    for (s, &(d, w)) in grid.iter().enumerate() {
        for (r, &renderer) in renderers.iter().enumerate() {
            let (mean_ms, std_ms) = mean_std(&samples[s * renderers.len() + r]);
            rows.push(BenchRow {
                renderer,
                n: n_values[w],
                vertices: dems[d].vertex_count(),
                mean_ms,
                std_ms,
                repetitions: plan.repetitions,
            });
        }
    }
    Ok(rows)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::domain("a regression needs at least three paired samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("regression input has no spread"));
    }
    if syy == 0.0 {
        return Ok(1.0);
    }
    Ok(sxy * sxy / (sxx * syy))
}

/// Result of comparing both renderers on one random input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCase {
    pub case: usize,
    pub vertices: usize,
    pub n: usize,
    pub max_abs_diff: f64,
    pub same_coverage: bool,
}

impl EquivalenceCase {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.same_coverage && self.max_abs_diff <= tolerance
    }
}

fn max_abs_diff(a: &IntegralImage, b: &IntegralImage) -> (f64, bool) {
    let same = a.counts == b.counts;
    let diff = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .zip(&a.counts)
        .filter(|(_, &c)| c > 0)
        .map(|((x, y), _)| (x - y).abs() as f64)
        .fold(0.0, f64::max);
    (diff, same)
}

/// Runs both renderers on `cases` random terrains, frame sets and center poses.
pub fn check_equivalence(cases: usize, resolution: usize, seed: u64) -> Result<Vec<EquivalenceCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|case| {
            let n = rng.random_range(2..=12);
            let vertices = rng.random_range(500..=20_000);
            let plan = BenchPlan {
                frame_resolution: rng.random_range(24..=64),
                altitude: rng.random_range(25.0..=50.0),
                spacing: rng.random_range(0.5..=2.0),
                ..BenchPlan::default()
            };
            let dem = Dem::synthetic(&bench_extent(&plan, n)?, vertices, rng.random_range(0.0..=4.0), rng.random())?;
            let frames = synthetic_frames(n, &plan, rng.random());
            let refs: Vec<&SingleImage> = frames.iter().collect();
            let mut center = centroid(&frames);
            center.position[0] += rng.random_range(-1.0..=1.0);
            center.position[1] += rng.random_range(-1.0..=1.0);
            let settings = IntegralSettings { fov: plan.fov, resolution };
            let classical = integrate_classical(&refs, &dem, center, settings)?;
            let deferred = integrate_deferred(&refs, &dem, center, settings, &mut GeometryCache::new())?;
            let (max_abs_diff, same_coverage) = max_abs_diff(&classical, &deferred);
            Ok(EquivalenceCase { case, vertices: dem.vertex_count(), n, max_abs_diff, same_coverage })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_of_exact_and_noisy_lines() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((linear_r_squared(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
        let r2 = linear_r_squared(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r2 - 0.64).abs() < 1e-12);
        assert!(linear_r_squared(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn random_inputs_render_identically() {
        for case in check_equivalence(4, 48, 11).unwrap() {
            assert!(case.passes(1e-6), "{case:?}");
        }
    }

    #[test]
    fn bench_table_has_one_row_per_renderer_and_setting() {
        let plan = BenchPlan { repetitions: 2, warmup: 0, resolution: 32, frame_resolution: 16, ..BenchPlan::default() };
        let rows = bench_rendering(&[1, 3], &[400, 900], &plan, 5).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.mean_ms >= 0.0 && r.repetitions == 2));
        assert!(bench_rendering(&[0], &[400], &plan, 5).is_err());
    }
}
