//! Integral images: single images projected onto the DEM and averaged,
//! rendered from the center of the contributing poses.
//!
//! Two equivalent paths are provided. [`integrate_classical`] runs the DEM
//! geometry pass once per projected image; [`integrate_deferred`] runs it once
//! per integral into a [`GeometryBuffer`] (per-pixel world positions) and
//! reuses it for every projection. Both accumulate in the same order and
//! sample frames nearest-neighbor, so their outputs agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Pose};
use crate::dem::{Dem, Extent};
use crate::error::{Error, Result};
use crate::sampling::SamplingPlan;
use crate::scene::{quantize16, SingleImage};

/// Output camera parameters of an integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralSettings {
    pub fov: f64,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    /// Averaged intensity; `NaN` where no frame contributed.
    pub pixels: Vec<f32>,
    /// Frames that contributed to each pixel.
    pub counts: Vec<u16>,
    pub resolution: usize,
    pub fov: f64,
    pub center_pose: Pose,
    /// Indices of the integrated frames in the flight.
    pub source_frames: Vec<usize>,
    /// Frames skipped because their footprint misses the DEM.
    pub excluded_frames: Vec<usize>,
    /// Geometry passes spent producing this image.
    pub geometry_passes: usize,
}

impl IntegralImage {
    pub fn camera(&self) -> Camera {
        Camera::new(self.center_pose, self.fov, self.resolution).expect("integral camera was validated")
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f32> {
        let i = row * self.resolution + col;
        (self.counts[i] > 0).then(|| self.pixels[i])
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.counts[index] > 0
    }

    /// Rounds every valid pixel to the 16-bit level it is stored with on disk.
    pub fn quantized(mut self) -> Self {
        for (p, &c) in self.pixels.iter_mut().zip(&self.counts) {
            if c > 0 {
                *p = quantize16(*p);
            }
        }
        self
    }
}

/// World position of the DEM surface behind every pixel of an integral's camera.
#[derive(Debug, Clone)]
pub struct GeometryBuffer {
    dem_id: u64,
    dem_revision: u64,
    camera: Camera,
    world: Vec<[f64; 3]>,
}

impl GeometryBuffer {
    /// Runs the geometry pass.
    pub fn build(dem: &Dem, camera: Camera) -> Self {
        GeometryBuffer {
            dem_id: dem.id(),
            dem_revision: dem.revision(),
            camera,
            world: dem.rasterize(&camera),
        }
    }

    pub fn is_valid_for(&self, dem: &Dem, camera: &Camera) -> bool {
        self.dem_id == dem.id() && self.dem_revision == dem.revision() && self.camera == *camera
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    /// World position seen at pixel `index`, `None` where the DEM is not visible.
    pub fn world(&self, index: usize) -> Option<[f64; 3]> {
        let p = self.world[index];
        p[0].is_finite().then_some(p)
    }
}

/// Holds the last geometry buffer and counts how many geometry passes ran.
#[derive(Debug, Default)]
pub struct GeometryCache {
    buffer: Option<GeometryBuffer>,
    passes: usize,
}

impl GeometryCache {
    pub fn new() -> Self {
        GeometryCache::default()
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    /// The buffer for `(dem, camera)`, rebuilt whenever either changed.
    pub fn get(&mut self, dem: &Dem, camera: Camera) -> (&GeometryBuffer, bool) {
        let stale = !self.buffer.as_ref().is_some_and(|b| b.is_valid_for(dem, &camera));
        if stale {
            self.buffer = Some(GeometryBuffer::build(dem, camera));
            self.passes += 1;
        }
        (self.buffer.as_ref().expect("buffer was just ensured"), stale)
    }
}

struct Accumulator {
    sums: Vec<f64>,
    counts: Vec<u16>,
}

impl Accumulator {
    fn new(pixels: usize) -> Self {
        Accumulator { sums: vec![0.0; pixels], counts: vec![0; pixels] }
    }

    /// Projects every visible surface point into `frame` and adds what it sees there.
    fn add_projection(&mut self, world: &[[f64; 3]], frame: &SingleImage, frame_camera: &Camera) {
        for (i, p) in world.iter().enumerate() {
            if !p[0].is_finite() {
                continue;
            }
            if let Some((col, row)) = frame_camera.pixel_of(*p) {
                self.sums[i] += frame.get(col, row) as f64;
                self.counts[i] = self.counts[i].saturating_add(1);
            }
        }
    }

    fn finish(self) -> (Vec<f32>, Vec<u16>) {
        let pixels = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c > 0 { (s / c as f64) as f32 } else { f32::NAN })
            .collect();
        (pixels, self.counts)
    }
}

fn frame_footprint(camera: &Camera) -> Extent {
    let half = camera.footprint_width(0.0) / 2.0;
    let [x, y, _] = camera.origin();
    Extent { x_min: x - half, x_max: x + half, y_min: y - half, y_max: y + half }
}

fn check_inputs(frames: &[&SingleImage]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::domain("an integral needs at least one frame"));
    }
    Ok(())
}

/// Splits frames into those whose footprint touches the DEM and the excluded rest.
fn usable_frames<'a>(frames: &[&'a SingleImage], dem: &Dem) -> (Vec<(usize, &'a SingleImage, Camera)>, Vec<usize>) {
    let dem_extent = dem.extent();
    let mut usable = Vec::with_capacity(frames.len());
    let mut excluded = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let camera = frame.camera();
        if frame_footprint(&camera).intersects(&dem_extent) {
            usable.push((i, *frame, camera));
        } else {
            excluded.push(i);
        }
    }
    (usable, excluded)
}

/// Classical integration: the whole DEM is rasterized again for each projected frame.
pub fn integrate_classical(
    frames: &[&SingleImage],
    dem: &Dem,
    center_pose: Pose,
    settings: IntegralSettings,
) -> Result<IntegralImage> {
    check_inputs(frames)?;
    let camera = Camera::new(center_pose, settings.fov, settings.resolution)?;
    let (usable, excluded_frames) = usable_frames(frames, dem);
    let mut acc = Accumulator::new(settings.resolution * settings.resolution);
    let mut passes = 0;
    for (_, frame, frame_camera) in &usable {
        let world = dem.rasterize(&camera);
        passes += 1;
        acc.add_projection(&world, frame, frame_camera);
    }
    let (pixels, counts) = acc.finish();
    Ok(IntegralImage {
        pixels,
        counts,
        resolution: settings.resolution,
        fov: settings.fov,
        center_pose,
        source_frames: (0..frames.len()).collect(),
        excluded_frames,
        geometry_passes: passes,
    })
}

/// Deferred integration: one geometry pass (or none, when `cache` already
/// holds the buffer for this DEM and pose), then one cheap projection per frame.
pub fn integrate_deferred(
    frames: &[&SingleImage],
    dem: &Dem,
    center_pose: Pose,
    settings: IntegralSettings,
    cache: &mut GeometryCache,
) -> Result<IntegralImage> {
    check_inputs(frames)?;
    let camera = Camera::new(center_pose, settings.fov, settings.resolution)?;
    let (usable, excluded_frames) = usable_frames(frames, dem);
    let (buffer, rebuilt) = cache.get(dem, camera);
    let mut acc = Accumulator::new(settings.resolution * settings.resolution);
    for (_, frame, frame_camera) in &usable {
        acc.add_projection(&buffer.world, frame, frame_camera);
    }
    let (pixels, counts) = acc.finish();
    Ok(IntegralImage {
        pixels,
        counts,
        resolution: settings.resolution,
        fov: settings.fov,
        center_pose,
        source_frames: (0..frames.len()).collect(),
        excluded_frames,
        geometry_passes: usize::from(rebuilt),
    })
}

/// Frame indices integrated by each window of a scan.
///
/// Window `k` nominally starts `k * d_f` meters along the track and samples
/// `N` images `d_i` apart; each sample is the recorded frame nearest to its
/// nominal distance, given frames every `frame_spacing` meters. Only full
/// windows are emitted.
pub fn window_schedule(frame_count: usize, frame_spacing: f64, plan: &SamplingPlan) -> Result<Vec<Vec<usize>>> {
    if !(frame_spacing.is_finite() && frame_spacing > 0.0) {
        return Err(Error::domain(format!("frame spacing must be positive, got {frame_spacing}")));
    }
    let nearest = |distance: f64| (distance / frame_spacing).round() as usize;
    let mut windows = Vec::new();
    for k in 0.. {
        let start = k as f64 * plan.d_f;
        let frames: Vec<usize> = (0..plan.n).map(|j| nearest(start + j as f64 * plan.params.d_i)).collect();
        if frames.last().is_none_or(|&last| last >= frame_count) {
            break;
        }
        windows.push(frames);
    }
    Ok(windows)
}

/// Streams integrals over a scan's frames, in window order.
///
/// Frames come from `fetch` (typically a renderer or a file reader) and are
/// kept only while a later window still needs them.
pub struct SlidingIntegrals<'a, F> {
    windows: std::vec::IntoIter<Vec<usize>>,
    next_index: usize,
    dem: &'a Dem,
    settings: IntegralSettings,
    cache: GeometryCache,
    frames: std::collections::BTreeMap<usize, SingleImage>,
    fetch: F,
}

impl<'a, F> SlidingIntegrals<'a, F>
where
    F: FnMut(usize) -> Result<SingleImage>,
{
    pub fn new(
        frame_count: usize,
        frame_spacing: f64,
        plan: &SamplingPlan,
        dem: &'a Dem,
        settings: IntegralSettings,
        fetch: F,
    ) -> Result<Self> {
        let windows = window_schedule(frame_count, frame_spacing, plan)?;
        Ok(SlidingIntegrals {
            windows: windows.into_iter(),
            next_index: 0,
            dem,
            settings,
            cache: GeometryCache::new(),
            frames: Default::default(),
            fetch,
        })
    }

    pub fn remaining(&self) -> usize {
        self.windows.len()
    }

    fn integrate_window(&mut self, window: &[usize]) -> Result<IntegralImage> {
        // Windows only move forward, so frames before this one are done.
        let first = window[0];
        self.frames.retain(|&i, _| i >= first);
        for &i in window {
            if !self.frames.contains_key(&i) {
                let frame = (self.fetch)(i)?;
                self.frames.insert(i, frame);
            }
        }
        let frames: Vec<&SingleImage> = window.iter().map(|i| &self.frames[i]).collect();
        let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
        let center = Pose::centroid(&poses).expect("windows are never empty");
        let mut integral = integrate_deferred(&frames, self.dem, center, self.settings, &mut self.cache)?;
        integral.source_frames = window.to_vec();
        integral.excluded_frames = integral.excluded_frames.iter().map(|&j| window[j]).collect();
        Ok(integral)
    }
}

impl<F> Iterator for SlidingIntegrals<'_, F>
where
    F: FnMut(usize) -> Result<SingleImage>,
{
    /// `(window index, integral)`.
    type Item = Result<(usize, IntegralImage)>;

    fn next(&mut self) -> Option<Self::Item> {
        let window = self.windows.next()?;
        let index = self.next_index;
        self.next_index += 1;
        Some(self.integrate_window(&window).map(|img| (index, img)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{make_plan, FlightParams};

    fn frame(pose: Pose, res: usize, f: impl Fn(usize, usize) -> f32) -> SingleImage {
        let pixels = (0..res * res).map(|i| f(i % res, i / res)).collect();
        SingleImage { pixels, resolution: res, pose, fov: 43.1, outside_pixels: 0 }
    }

    fn settings(res: usize) -> IntegralSettings {
        IntegralSettings { fov: 43.1, resolution: res }
    }

    fn flat_dem() -> Dem {
        Dem::flat(&Extent::centered(80.0, 60.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn single_frame_is_a_reprojection() {
        let dem = flat_dem();
        let pose = Pose::new(0.0, 0.0, 35.0, 0.0);
        let f = frame(pose, 32, |c, r| (c * 32 + r) as f32 / 1024.0);
        let out = integrate_classical(&[&f], &dem, pose, settings(32)).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(out.get(c, r), Some(f.get(c, r)));
            }
        }
        assert_eq!(out.geometry_passes, 1);
    }

    #[test]
    fn identical_frames_average_to_one_reprojection() {
        let dem = flat_dem();
        let pose = Pose::new(2.0, 1.0, 35.0, 0.0);
        let f = frame(pose, 24, |c, r| ((c ^ r) % 7) as f32 / 7.0);
        let one = integrate_classical(&[&f], &dem, pose, settings(24)).unwrap();
        let many = integrate_classical(&[&f, &f, &f, &f], &dem, pose, settings(24)).unwrap();
        for i in 0..24 * 24 {
            assert!((one.pixels[i] - many.pixels[i]).abs() < 1e-6);
            assert_eq!(many.counts[i], 4);
        }
    }

    #[test]
    fn constant_frames_integrate_to_the_constant() {
        let dem = flat_dem();
        let frames: Vec<SingleImage> = (0..6)
            .map(|k| frame(Pose::new(k as f64 * 2.0 - 5.0, 0.0, 35.0, k as f64), 20, |_, _| 0.375))
            .collect();
        let refs: Vec<&SingleImage> = frames.iter().collect();
        let center = Pose::centroid(&frames.iter().map(|f| f.pose).collect::<Vec<_>>()).unwrap();
        let out = integrate_deferred(&refs, &dem, center, settings(40), &mut GeometryCache::new()).unwrap();
        let mut partial = false;
        for i in 0..40 * 40 {
            if out.counts[i] > 0 {
                assert!((out.pixels[i] - 0.375).abs() < 1e-7);
                partial |= out.counts[i] < 6;
            } else {
                assert!(out.pixels[i].is_nan());
            }
        }
        assert!(partial, "edges should be covered by fewer frames");
        assert!(out.counts.iter().all(|&c| c <= 6));
    }

    #[test]
    fn deferred_matches_classical_and_caches_geometry() {
        let dem = Dem::synthetic(&Extent::centered(90.0, 90.0).unwrap(), 4_000, 2.0, 3).unwrap();
        let frames: Vec<SingleImage> = (0..5)
            .map(|k| {
                frame(Pose::new(k as f64 * 1.3 - 3.0, 0.5, 35.0, k as f64), 30, move |c, r| {
                    ((c * 7 + r * 3 + k) % 11) as f32 / 11.0
                })
            })
            .collect();
        let refs: Vec<&SingleImage> = frames.iter().collect();
        let center = Pose::new(-0.4, 0.5, 35.0, 2.0);
        let classical = integrate_classical(&refs, &dem, center, settings(36)).unwrap();
        let mut cache = GeometryCache::new();
        let deferred = integrate_deferred(&refs, &dem, center, settings(36), &mut cache).unwrap();
        assert_eq!(classical.counts, deferred.counts);
        for (a, b) in classical.pixels.iter().zip(&deferred.pixels) {
            assert!((a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-6);
        }
        assert_eq!(classical.geometry_passes, 5);
        assert_eq!(deferred.geometry_passes, 1);

        let again = integrate_deferred(&refs, &dem, center, settings(36), &mut cache).unwrap();
        assert_eq!(again.geometry_passes, 0);
        assert_eq!(cache.passes(), 1);

        // A moved center or an edited DEM invalidates the buffer.
        let moved = Pose::new(0.0, 0.5, 35.0, 2.0);
        integrate_deferred(&refs, &dem, moved, settings(36), &mut cache).unwrap();
        assert_eq!(cache.passes(), 2);
        let mut edited = dem.clone();
        integrate_deferred(&refs, &edited, moved, settings(36), &mut cache).unwrap();
        assert_eq!(cache.passes(), 3);
        edited.set_height(3, 3, 1.0);
        integrate_deferred(&refs, &edited, moved, settings(36), &mut cache).unwrap();
        assert_eq!(cache.passes(), 4);
    }

    #[test]
    fn frames_missing_the_dem_are_excluded() {
        let dem = flat_dem();
        let near = frame(Pose::new(0.0, 0.0, 35.0, 0.0), 16, |_, _| 0.5);
        let far = frame(Pose::new(500.0, 0.0, 35.0, 1.0), 16, |_, _| 0.9);
        let out = integrate_classical(&[&near, &far], &dem, near.pose, settings(16)).unwrap();
        assert_eq!(out.excluded_frames, vec![1]);
        assert!(integrate_classical(&[], &dem, near.pose, settings(16)).is_err());
    }

    #[test]
    fn windows_step_by_integral_spacing() {
        // d_f = 2 m, d_i = 1 m, frames every 1 m: windows start every 2 frames.
        let plan = make_plan(FlightParams { v_f: 4.0, d_i: 1.0, ..FlightParams::default() }).unwrap();
        let windows = window_schedule(60, 1.0, &plan).unwrap();
        assert_eq!(windows[0], (0..plan.n).collect::<Vec<_>>());
        assert_eq!(windows[1][0], 2);
        assert!(windows.iter().all(|w| w.len() == plan.n && *w.last().unwrap() < 60));
        assert_eq!(windows.len(), (60 - plan.n) / 2 + 1);
        assert!(window_schedule(10, 1.0, &plan).unwrap().is_empty());
    }
}
