//! Nadir pinhole camera.
//!
//! The camera always looks straight down with image "up" along world +y, so a
//! pose is just a position and a timestamp. Pixel `(col, row)` covers the
//! continuous image coordinates `[col, col + 1) x [row, row + 1)`; columns grow
//! with world x, rows grow with world -y.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// World position, m. `z` is the altitude above the ground datum.
    pub position: [f64; 3],
    /// Capture time, s.
    pub timestamp: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, timestamp: f64) -> Self {
        Pose { position: [x, y, z], timestamp }
    }

    /// Nadir pose at the arithmetic mean of `poses`.
    pub fn centroid(poses: &[Pose]) -> Option<Pose> {
        if poses.is_empty() {
            return None;
        }
        let n = poses.len() as f64;
        let mut sum = [0.0; 4];
        for p in poses {
            sum[0] += p.position[0];
            sum[1] += p.position[1];
            sum[2] += p.position[2];
            sum[3] += p.timestamp;
        }
        Some(Pose::new(sum[0] / n, sum[1] / n, sum[2] / n, sum[3] / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub fov: f64,
    pub resolution: usize,
    /// Tangent-plane extent of one pixel: `2 tan(fov / 2) / resolution`.
    pitch: f64,
}

impl Camera {
    pub fn new(pose: Pose, fov: f64, resolution: usize) -> Result<Self> {
        if !(fov.is_finite() && fov > 0.0 && fov < 180.0) {
            return Err(Error::domain(format!("field of view must lie in (0, 180) degrees, got {fov}")));
        }
        if resolution == 0 {
            return Err(Error::domain("image resolution must be positive"));
        }
        ensure_positive("camera altitude", pose.position[2])?;
        let pitch = 2.0 * (fov.to_radians() / 2.0).tan() / resolution as f64;
        Ok(Camera { pose, fov, resolution, pitch })
    }

    pub fn origin(&self) -> [f64; 3] {
        self.pose.position
    }

    /// Unnormalized ray direction (z component -1) through continuous image point `(u, v)`.
    pub fn direction(&self, u: f64, v: f64) -> [f64; 3] {
        let half = self.resolution as f64 / 2.0;
        [(u - half) * self.pitch, -(v - half) * self.pitch, -1.0]
    }

    /// Direction through the center of pixel `(col, row)`.
    pub fn pixel_direction(&self, col: usize, row: usize) -> [f64; 3] {
        self.direction(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Continuous image coordinates of a world point, `None` if at or above the camera.
    pub fn project(&self, world: [f64; 3]) -> Option<[f64; 2]> {
        let [cx, cy, cz] = self.pose.position;
        let depth = cz - world[2];
        if depth <= 0.0 {
            return None;
        }
        let half = self.resolution as f64 / 2.0;
        let scale = 1.0 / (depth * self.pitch);
        Some([half + (world[0] - cx) * scale, half - (world[1] - cy) * scale])
    }

    /// Pixel containing the projection of `world` (nearest-neighbor lookup).
    pub fn pixel_of(&self, world: [f64; 3]) -> Option<(usize, usize)> {
        let [u, v] = self.project(world)?;
        let w = self.resolution as f64;
        if (0.0..w).contains(&u) && (0.0..w).contains(&v) {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// Width of the ground footprint on a plane at height `ground_z`.
    pub fn footprint_width(&self, ground_z: f64) -> f64 {
        (self.pose.position[2] - ground_z) * self.pitch * self.resolution as f64
    }

    /// Ground length of one pixel on a plane at height `ground_z`.
    pub fn ground_sample_distance(&self, ground_z: f64) -> f64 {
        (self.pose.position[2] - ground_z) * self.pitch
    }

    /// Intersection of the ray through `(u, v)` with the horizontal plane at `z`.
    pub fn hit_plane(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        let o = self.pose.position;
        let d = self.direction(u, v);
        let t = (o[2] - z) / -d[2];
        [o[0] + t * d[0], o[1] + t * d[1], z]
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    #[test]
    fn footprint_follows_coverage_formula() {
        let cam = Camera::new(Pose::new(0.0, 0.0, 35.0, 0.0), 43.0, 512).unwrap();
        assert_relative_eq!(cam.footprint_width(0.0), 2.0 * 35.0 * 21.5f64.to_radians().tan(), max_relative = 1e-12);
    }

    #[test]
    fn projection_inverts_rays() {
        let cam = Camera::new(Pose::new(3.0, -2.0, 40.0, 0.0), 50.0, 200).unwrap();
        for &(u, v) in &[(0.5, 0.5), (100.0, 37.25), (199.5, 120.0)] {
            let hit = cam.hit_plane(u, v, 1.5);
            let back = cam.project(hit).unwrap();
            assert_relative_eq!(back[0], u, epsilon = 1e-9);
            assert_relative_eq!(back[1], v, epsilon = 1e-9);
        }
    }

    #[test]
    fn image_axes() {
        let cam = Camera::new(Pose::new(0.0, 0.0, 10.0, 0.0), 90.0, 100).unwrap();
        let (col, row) = cam.pixel_of([5.0, 5.0, 0.0]).unwrap();
        assert!(col > 50 && row < 50);
        assert!(cam.pixel_of([0.0, 0.0, 20.0]).is_none());
        assert!(cam.pixel_of([100.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn centroid_of_poses() {
        let c = Pose::centroid(&[Pose::new(0.0, 0.0, 35.0, 1.0), Pose::new(2.0, 4.0, 35.0, 3.0)]).unwrap();
        assert_eq!(c, Pose::new(1.0, 2.0, 35.0, 2.0));
        assert!(Pose::centroid(&[]).is_none());
    }

    #[test]
    fn invalid_cameras() {
        assert!(Camera::new(Pose::new(0.0, 0.0, 35.0, 0.0), 180.0, 10).is_err());
        assert!(Camera::new(Pose::new(0.0, 0.0, 35.0, 0.0), 40.0, 0).is_err());
        assert!(Camera::new(Pose::new(0.0, 0.0, -1.0, 0.0), 40.0, 10).is_err());
    }
}
