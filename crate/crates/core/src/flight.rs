//! Constant-speed 1D scan flights: GPS fixes, per-frame pose interpolation and
//! the simulated frame stream.
//!
//! The camera records a frame every `t_i` seconds but its shutter fires after
//! an unknown constant delay in `[0, t_i)`. Poses are interpolated from GPS
//! fixes at the middle of each frame interval, so the registered position is
//! off by at most `v_f * t_i / 2` whatever the GPS rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Pose};
use crate::dem::Extent;
use crate::error::{ensure_positive, Error, Result};
use crate::sampling::{floor_with_slack, FlightParams};
use crate::scene::{render_single_image, Scene, SingleImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub timestamp: f64,
    pub position: [f64; 3],
}

/// Linearly interpolates a pose for every frame time from the bracketing GPS fixes.
pub fn interpolate_poses(fixes: &[GpsFix], frame_times: &[f64]) -> Result<Vec<Pose>> {
    if fixes.len() < 2 {
        return Err(Error::domain("pose interpolation needs at least two GPS fixes"));
    }
    if fixes.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::domain("GPS fix timestamps must be strictly increasing"));
    }
    let first = fixes[0].timestamp;
    let last = fixes[fixes.len() - 1].timestamp;
    frame_times
        .iter()
        .map(|&t| {
            if !(first..=last).contains(&t) {
                return Err(Error::domain(format!(
                    "frame time {t} s lies outside the GPS fix range [{first}, {last}] s"
                )));
            }
            // First fix strictly after t, clamped so that [hi - 1, hi] brackets t.
            let hi = fixes.partition_point(|f| f.timestamp <= t).clamp(1, fixes.len() - 1);
            let (a, b) = (&fixes[hi - 1], &fixes[hi]);
            let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
            let lerp = |k: usize| a.position[k] + w * (b.position[k] - a.position[k]);
            Ok(Pose { position: [lerp(0), lerp(1), lerp(2)], timestamp: t })
        })
        .collect()
}

/// Straight ground track flown at constant altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightPath {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl FlightPath {
    pub fn along_x(x_start: f64, x_end: f64, y: f64) -> Self {
        FlightPath { start: [x_start, y], end: [x_end, y] }
    }

    pub fn length(&self) -> f64 {
        let dx = self.end[0] - self.start[0];
        let dy = self.end[1] - self.start[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Unit direction of travel (+x for a zero-length path).
    pub fn direction(&self) -> [f64; 2] {
        let len = self.length();
        if len == 0.0 {
            [1.0, 0.0]
        } else {
            [(self.end[0] - self.start[0]) / len, (self.end[1] - self.start[1]) / len]
        }
    }

    pub fn point_at(&self, distance: f64) -> [f64; 2] {
        let d = self.direction();
        [self.start[0] + distance * d[0], self.start[1] + distance * d[1]]
    }

    /// Ground area imaged along the path by a camera with square footprint `coverage`.
    pub fn swath(&self, coverage: f64) -> Extent {
        let half = coverage / 2.0;
        Extent {
            x_min: self.start[0].min(self.end[0]) - half,
            x_max: self.start[0].max(self.end[0]) + half,
            y_min: self.start[1].min(self.end[1]) - half,
            y_max: self.start[1].max(self.end[1]) + half,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSettings {
    pub resolution: usize,
    /// GPS fix rate, Hz.
    pub gps_rate: f64,
}

impl Default for CameraSettings {
    fn default() -> Self {
        CameraSettings { resolution: 512, gps_rate: 5.0 }
    }
}

/// Timing and geometry of every frame of a scan, without pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightRecord {
    pub params: FlightParams,
    pub path: FlightPath,
    pub camera: CameraSettings,
    /// Unknown shutter delay, s, in `[0, t_i)`.
    pub capture_delay: f64,
    pub fixes: Vec<GpsFix>,
    /// Registered (interpolated) pose of each frame.
    pub poses: Vec<Pose>,
    /// Where each frame was actually captured.
    pub true_poses: Vec<Pose>,
}

impl FlightRecord {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    /// Ground distance between consecutive frames, `v_f * t_i`.
    pub fn frame_spacing(&self) -> f64 {
        self.params.frame_spacing()
    }
}

/// Number of frames recorded along `length` meters at `spacing`: one per full
/// spacing, and always at least one.
pub fn frame_count(length: f64, spacing: f64) -> usize {
    floor_with_slack(length / spacing).max(1)
}

/// Lays out the frames of a scan: capture times, GPS fixes, true and registered poses.
pub fn plan_flight(params: FlightParams, path: FlightPath, camera: CameraSettings, seed: u64) -> Result<FlightRecord> {
    params.validate()?;
    ensure_positive("GPS rate", camera.gps_rate)?;
    let count = frame_count(path.length(), params.frame_spacing());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capture_delay = rng.random::<f64>() * params.t_i;

    let position_at = |t: f64| {
        let p = path.point_at(params.v_f * t);
        [p[0], p[1], params.h]
    };
    let last_capture = (count - 1) as f64 * params.t_i + params.t_i;
    let fix_interval = 1.0 / camera.gps_rate;
    let fix_count = (last_capture / fix_interval).ceil() as usize + 1;
    let fixes: Vec<GpsFix> = (0..fix_count.max(2))
        .map(|j| {
            let t = j as f64 * fix_interval;
            GpsFix { timestamp: t, position: position_at(t) }
        })
        .collect();

    let frame_times: Vec<f64> = (0..count).map(|k| k as f64 * params.t_i + params.t_i / 2.0).collect();
    let poses = interpolate_poses(&fixes, &frame_times)?;
    let true_poses = (0..count)
        .map(|k| {
            let t = k as f64 * params.t_i + capture_delay;
            let p = position_at(t);
            Pose::new(p[0], p[1], p[2], t)
        })
        .collect();
    Ok(FlightRecord { params, path, camera, capture_delay, fixes, poses, true_poses })
}

/// Renders frame `index` of a flight: pixels from the true capture position,
/// tagged with the registered pose.
pub fn render_frame(scene: &Scene, flight: &FlightRecord, index: usize) -> Result<SingleImage> {
    let true_pose = *flight
        .true_poses
        .get(index)
        .ok_or_else(|| Error::domain(format!("frame {index} out of range")))?;
    let mut image = render_single_image(scene, true_pose, flight.params.fov, flight.camera.resolution)?;
    image.pose = flight.poses[index];
    Ok(image)
}

/// Simulates a scan over `scene`, yielding frames in timestamp order.
pub fn fly_scan<'a>(
    scene: &'a Scene,
    params: FlightParams,
    path: FlightPath,
    camera: CameraSettings,
    seed: u64,
) -> Result<impl Iterator<Item = Result<(SingleImage, Pose)>> + 'a> {
    let flight = plan_flight(params, path, camera, seed)?;
    let probe = Camera::new(Pose::new(0.0, 0.0, params.h, 0.0), params.fov, camera.resolution)?;
    let swath = path.swath(probe.footprint_width(0.0));
    if !scene.extent().contains_extent(&swath) {
        return Err(Error::domain("the flight footprint leaves the scene extent"));
    }
    Ok((0..flight.frame_count()).map(move |k| {
        let image = render_frame(scene, &flight, k)?;
        let pose = image.pose;
        Ok((image, pose))
    }))
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::occlusion::OcclusionParams;
    use crate::sampling::interpolation_error;
    use crate::scene::{generate_forest, SceneConfig};

    fn fixes() -> Vec<GpsFix> {
        vec![
            GpsFix { timestamp: 0.0, position: [0.0, 0.0, 35.0] },
            GpsFix { timestamp: 0.2, position: [0.8, 0.0, 35.0] },
            GpsFix { timestamp: 0.4, position: [1.6, 0.4, 35.0] },
        ]
    }

    #[test]
    fn fix_times_return_fixes() {
        let poses = interpolate_poses(&fixes(), &[0.0, 0.2, 0.4]).unwrap();
        for (pose, fix) in poses.iter().zip(fixes()) {
            assert_eq!(pose.position, fix.position);
        }
    }

    #[test]
    fn midway_is_midpoint() {
        let poses = interpolate_poses(&fixes(), &[0.3]).unwrap();
        assert_relative_eq!(poses[0].position[0], 1.2, epsilon = 1e-12);
        assert_relative_eq!(poses[0].position[1], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn no_extrapolation() {
        assert!(interpolate_poses(&fixes(), &[0.41]).is_err());
        assert!(interpolate_poses(&fixes(), &[-0.01]).is_err());
        assert!(interpolate_poses(&fixes()[..1], &[0.0]).is_err());
    }

    #[test]
    fn registration_error_is_bounded_for_any_delay() {
        for v_f in [1.0, 4.0, 6.0, 10.0] {
            let params = FlightParams { v_f, ..FlightParams::default() };
            let bound = interpolation_error(v_f, params.t_i).unwrap();
            for seed in 0..25 {
                let flight = plan_flight(params, FlightPath::along_x(0.0, 20.0, 0.0), CameraSettings::default(), seed).unwrap();
                for (pose, truth) in flight.poses.iter().zip(&flight.true_poses) {
                    let err = (pose.position[0] - truth.position[0]).abs();
                    assert!(err <= bound + 1e-12, "error {err} above bound {bound}");
                }
            }
        }
    }

    #[test]
    fn frame_counts_and_spacing() {
        let params = FlightParams { v_f: 4.0, ..FlightParams::default() };
        assert_relative_eq!(params.frame_spacing(), 0.1333, epsilon = 1e-4);
        assert_eq!(frame_count(27.6, 0.92), 30);
        assert_eq!(frame_count(0.0, 0.92), 1);
        let flight = plan_flight(params, FlightPath::along_x(5.0, 5.0, 0.0), CameraSettings::default(), 1).unwrap();
        assert_eq!(flight.frame_count(), 1);
        let flight = plan_flight(params, FlightPath::along_x(0.0, 8.0, 0.0), CameraSettings::default(), 1).unwrap();
        assert_eq!(flight.frame_count(), 60);
        assert!(flight.poses.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
        assert!(flight.poses.iter().all(|p| p.position[2] == 35.0));
    }

    #[test]
    fn scan_is_deterministic_and_checks_extent() {
        let config = SceneConfig::new(
            Extent::centered(50.0, 34.0).unwrap(),
            OcclusionParams::new(0.01, 0.5, 10.0, 0.0).unwrap(),
        );
        let scene = generate_forest(&config, 4).unwrap();
        let params = FlightParams { v_f: 10.0, ..FlightParams::default() };
        let camera = CameraSettings { resolution: 24, gps_rate: 5.0 };
        let path = FlightPath::along_x(-5.0, -4.0, 0.0);
        let a: Vec<_> = fly_scan(&scene, params, path, camera, 9).unwrap().map(|f| f.unwrap()).collect();
        let b: Vec<_> = fly_scan(&scene, params, path, camera, 9).unwrap().map(|f| f.unwrap()).collect();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert!(fly_scan(&scene, params, FlightPath::along_x(-20.0, 20.0, 0.0), camera, 9).is_err());
    }
}
