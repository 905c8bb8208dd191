//! Digital elevation model: a regular grid of height samples triangulated into
//! a mesh, and the geometry pass that rasterizes it from a camera.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{ensure_positive, Error, Result};

static NEXT_DEM_ID: AtomicU64 = AtomicU64::new(1);

/// Axis-aligned ground rectangle, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && y_min.is_finite() && y_max.is_finite())
            || x_max <= x_min
            || y_max <= y_min
        {
            return Err(Error::domain(format!(
                "empty or non-finite extent [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Extent { x_min, x_max, y_min, y_max })
    }

    pub fn centered(width: f64, height: f64) -> Result<Self> {
        Extent::new(-width / 2.0, width / 2.0, -height / 2.0, height / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains_extent(&self, other: &Extent) -> bool {
        other.x_min >= self.x_min && other.x_max <= self.x_max && other.y_min >= self.y_min && other.y_max <= self.y_max
    }

    pub fn intersects(&self, other: &Extent) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }

    pub fn grown(&self, margin: f64) -> Extent {
        Extent {
            x_min: self.x_min - margin,
            x_max: self.x_max + margin,
            y_min: self.y_min - margin,
            y_max: self.y_max + margin,
        }
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Height field sampled on a regular vertex grid.
#[derive(Debug)]
pub struct Dem {
    id: u64,
    revision: u64,
    origin: [f64; 2],
    spacing: f64,
    nx: usize,
    ny: usize,
    heights: Vec<f32>,
    /// Lower bound of every height, bounds what a camera can see.
    min_height: f32,
}

impl Clone for Dem {
    /// Clones get a fresh identity so geometry caches never confuse them with the original.
    fn clone(&self) -> Self {
        Dem {
            id: NEXT_DEM_ID.fetch_add(1, Ordering::Relaxed),
            revision: 0,
            origin: self.origin,
            spacing: self.spacing,
            nx: self.nx,
            ny: self.ny,
            heights: self.heights.clone(),
            min_height: self.min_height,
        }
    }
}

impl Dem {
    /// Grid with `nx * ny` vertices starting at `origin`, heights row-major (x fastest).
    pub fn from_heights(origin: [f64; 2], spacing: f64, nx: usize, ny: usize, heights: Vec<f32>) -> Result<Self> {
        ensure_positive("DEM spacing", spacing)?;
        if nx < 2 || ny < 2 {
            return Err(Error::domain("a DEM needs at least 2 x 2 vertices"));
        }
        if heights.len() != nx * ny {
            return Err(Error::domain(format!("expected {} heights, got {}", nx * ny, heights.len())));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::domain("DEM heights must be finite"));
        }
        let min_height = heights.iter().copied().fold(f32::INFINITY, f32::min);
        Ok(Dem {
            id: NEXT_DEM_ID.fetch_add(1, Ordering::Relaxed),
            revision: 0,
            origin,
            spacing,
            nx,
            ny,
            heights,
            min_height,
        })
    }

    /// Flat DEM at `z = 0` covering `extent` with vertices every `spacing` meters.
    pub fn flat(extent: &Extent, spacing: f64) -> Result<Self> {
        ensure_positive("DEM spacing", spacing)?;
        let nx = (extent.width() / spacing).ceil() as usize + 1;
        let ny = (extent.height() / spacing).ceil() as usize + 1;
        Dem::from_heights([extent.x_min, extent.y_min], spacing, nx, ny, vec![0.0; nx * ny])
    }

    /// Gently rolling terrain with about `vertex_count` vertices over `extent`.
    pub fn synthetic(extent: &Extent, vertex_count: usize, amplitude: f64, seed: u64) -> Result<Self> {
        let side = ((vertex_count as f64).sqrt().round() as usize).max(2);
        let spacing = extent.width().max(extent.height()) / (side - 1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<[f64; 4]> = (0..4)
            .map(|_| {
                [
                    rng.random_range(0.02..0.2),
                    rng.random_range(0.02..0.2),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.3..1.0),
                ]
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w[3]).sum();
        let mut heights = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                let x = extent.x_min + i as f64 * spacing;
                let y = extent.y_min + j as f64 * spacing;
                let h: f64 = waves.iter().map(|w| w[3] * (w[0] * x + w[1] * y + w[2]).sin()).sum();
                heights.push((amplitude * h / norm) as f32);
            }
        }
        Dem::from_heights([extent.x_min, extent.y_min], spacing, side, side, heights)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn vertex_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Vertex heights, row-major from the south-west corner.
    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extent(&self) -> Extent {
        Extent {
            x_min: self.origin[0],
            x_max: self.origin[0] + (self.nx - 1) as f64 * self.spacing,
            y_min: self.origin[1],
            y_max: self.origin[1] + (self.ny - 1) as f64 * self.spacing,
        }
    }

    pub fn vertex(&self, i: usize, j: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.heights[j * self.nx + i] as f64,
        ]
    }

    /// Changes one vertex height; invalidates cached geometry built from this DEM.
    pub fn set_height(&mut self, i: usize, j: usize, z: f32) {
        self.heights[j * self.nx + i] = z;
        self.min_height = self.min_height.min(z);
        self.revision += 1;
    }

    /// Bilinear height at `(x, y)`, `None` outside the grid.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let fx = (x - self.origin[0]) / self.spacing;
        let fy = (y - self.origin[1]) / self.spacing;
        let max_x = (self.nx - 1) as f64;
        let max_y = (self.ny - 1) as f64;
        if !(0.0..=max_x).contains(&fx) || !(0.0..=max_y).contains(&fy) {
            return None;
        }
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let h = |i: usize, j: usize| self.heights[j * self.nx + i] as f64;
        let bottom = h(i, j) * (1.0 - tx) + h(i + 1, j) * tx;
        let top = h(i, j + 1) * (1.0 - tx) + h(i + 1, j + 1) * tx;
        Some(bottom * (1.0 - ty) + top * ty)
    }

    /// First intersection of the downward ray `origin + t dir` with the surface,
    /// found by fixed-point iteration (exact for flat terrain).
    pub fn intersect_ray(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<[f64; 3]> {
        if dir[2] >= 0.0 {
            return None;
        }
        let mut z = 0.0;
        let mut point = [0.0; 3];
        for _ in 0..16 {
            let t = (origin[2] - z) / -dir[2];
            point = [origin[0] + t * dir[0], origin[1] + t * dir[1], z];
            let surface = self.height_at(point[0], point[1])?;
            if (surface - z).abs() < 1e-9 {
                break;
            }
            z = surface;
        }
        Some(point)
    }

    /// Rasterizes the mesh from `camera` into per-pixel world positions
    /// (row-major, `NaN` where no surface is visible). This is the geometry
    /// pass: every vertex is transformed and every triangle visited.
    pub fn rasterize(&self, camera: &Camera) -> Vec<[f64; 3]> {
        let w = camera.resolution;
        let mut world = vec![[f64::NAN; 3]; w * w];
        let mut depth = vec![f64::INFINITY; w * w];

        // Only cells inside the widest footprint (at the lowest height) can
        // cover a pixel center.
        let [cx, cy, cz] = camera.pose.position;
        let half = camera.footprint_width(self.min_height as f64) / 2.0;
        if half.is_nan() || half <= 0.0 {
            return world;
        }
        let cells = |center: f64, origin: f64, n: usize| {
            let lo = ((center - half - origin) / self.spacing).floor() - 1.0;
            let hi = ((center + half - origin) / self.spacing).ceil() + 1.0;
            let last = (n - 1) as f64;
            (lo.clamp(0.0, last) as usize, hi.clamp(0.0, last) as usize)
        };
        let (i0, i1) = cells(cx, self.origin[0], self.nx);
        let (j0, j1) = cells(cy, self.origin[1], self.ny);
        if i0 == i1 || j0 == j1 {
            return world;
        }
        let sub_nx = i1 - i0 + 1;

        // Screen position and inverse depth of every vertex in range.
        let screen: Vec<[f64; 3]> = (j0..=j1)
            .flat_map(|j| (i0..=i1).map(move |i| (i, j)))
            .map(|(i, j)| {
                let p = self.vertex(i, j);
                match camera.project(p) {
                    Some([u, v]) => [u, v, 1.0 / (cz - p[2])],
                    None => [f64::NAN; 3],
                }
            })
            .collect();
        let vertex_at = |k: usize| self.vertex(i0 + k % sub_nx, j0 + k / sub_nx);

        let wf = w as f64;
        for j in 0..j1 - j0 {
            for i in 0..sub_nx - 1 {
                let a = j * sub_nx + i;
                let b = a + 1;
                let c = a + sub_nx;
                let d = c + 1;
                for tri in [[a, b, c], [b, d, c]] {
                    let s = [screen[tri[0]], screen[tri[1]], screen[tri[2]]];
                    if s.iter().any(|p| p[2].is_nan()) {
                        continue;
                    }
                    let min_u = s[0][0].min(s[1][0]).min(s[2][0]);
                    let max_u = s[0][0].max(s[1][0]).max(s[2][0]);
                    let min_v = s[0][1].min(s[1][1]).min(s[2][1]);
                    let max_v = s[0][1].max(s[1][1]).max(s[2][1]);
                    // Pixel centers sit at k + 0.5.
                    let c0 = (min_u - 0.5).ceil().max(0.0);
                    let c1 = (max_u - 0.5).floor().min(wf - 1.0);
                    let r0 = (min_v - 0.5).ceil().max(0.0);
                    let r1 = (max_v - 0.5).floor().min(wf - 1.0);
                    if c0 > c1 || r0 > r1 {
                        continue;
                    }
                    let area = edge(s[0], s[1], s[2]);
                    if area == 0.0 {
                        continue;
                    }
                    let verts = [vertex_at(tri[0]), vertex_at(tri[1]), vertex_at(tri[2])];
                    for row in r0 as usize..=r1 as usize {
                        let py = row as f64 + 0.5;
                        for col in c0 as usize..=c1 as usize {
                            let px = col as f64 + 0.5;
                            let p = [px, py, 0.0];
                            let b0 = edge(s[1], s[2], p) / area;
                            let b1 = edge(s[2], s[0], p) / area;
                            let b2 = edge(s[0], s[1], p) / area;
                            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                                continue;
                            }
                            // Perspective-correct weights.
                            let w0 = b0 * s[0][2];
                            let w1 = b1 * s[1][2];
                            let w2 = b2 * s[2][2];
                            let inv = w0 + w1 + w2;
                            let z = 1.0 / inv;
                            let idx = row * w + col;
                            if z < depth[idx] {
                                depth[idx] = z;
                                let (w0, w1, w2) = (w0 * z, w1 * z, w2 * z);
                                world[idx] = [
                                    w0 * verts[0][0] + w1 * verts[1][0] + w2 * verts[2][0],
                                    w0 * verts[0][1] + w1 * verts[1][1] + w2 * verts[2][1],
                                    w0 * verts[0][2] + w1 * verts[1][2] + w2 * verts[2][2],
                                ];
                            }
                        }
                    }
                }
            }
        }
        world
    }

}

fn edge(a: [f64; 3], b: [f64; 3], p: [f64; 3]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::camera::Pose;

    #[test]
    fn flat_rasterization_matches_ray_casting() {
        let extent = Extent::centered(60.0, 60.0).unwrap();
        let dem = Dem::flat(&extent, 2.0).unwrap();
        let cam = Camera::new(Pose::new(1.0, -2.0, 35.0, 0.0), 43.1, 64).unwrap();
        let world = dem.rasterize(&cam);
        for row in (0..64).step_by(7) {
            for col in (0..64).step_by(5) {
                let expected = cam.hit_plane(col as f64 + 0.5, row as f64 + 0.5, 0.0);
                let got = world[row * 64 + col];
                assert_relative_eq!(got[0], expected[0], epsilon = 1e-9);
                assert_relative_eq!(got[1], expected[1], epsilon = 1e-9);
                assert_relative_eq!(got[2], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pixels_off_the_mesh_stay_invalid() {
        let dem = Dem::flat(&Extent::new(0.0, 10.0, -50.0, 50.0).unwrap(), 1.0).unwrap();
        let cam = Camera::new(Pose::new(0.0, 0.0, 35.0, 0.0), 43.1, 32).unwrap();
        let world = dem.rasterize(&cam);
        assert!(world[16 * 32].iter().all(|c| c.is_nan()));
        assert!(world[16 * 32 + 20][0].is_finite());
    }

    #[test]
    fn terrain_positions_lie_on_surface() {
        let extent = Extent::centered(80.0, 80.0).unwrap();
        let dem = Dem::synthetic(&extent, 10_000, 3.0, 5).unwrap();
        let cam = Camera::new(Pose::new(0.0, 0.0, 60.0, 0.0), 43.1, 48).unwrap();
        for p in dem.rasterize(&cam).iter().filter(|p| p[0].is_finite()) {
            // Bilinear and triangle interpolation differ inside a cell; bound by the terrain slope.
            let h = dem.height_at(p[0], p[1]).unwrap();
            assert!((h - p[2]).abs() < 0.05, "{h} vs {}", p[2]);
        }
    }

    #[test]
    fn ray_intersection_on_terrain() {
        let dem = Dem::synthetic(&Extent::centered(50.0, 50.0).unwrap(), 2_500, 2.0, 9).unwrap();
        let hit = dem.intersect_ray([1.0, 2.0, 40.0], [0.1, -0.05, -1.0]).unwrap();
        assert!((dem.height_at(hit[0], hit[1]).unwrap() - hit[2]).abs() < 1e-6);
        assert!(dem.intersect_ray([100.0, 0.0, 40.0], [0.0, 0.0, -1.0]).is_none());
    }

    #[test]
    fn identity_and_revision() {
        let mut dem = Dem::flat(&Extent::centered(4.0, 4.0).unwrap(), 1.0).unwrap();
        let copy = dem.clone();
        assert_ne!(dem.id(), copy.id());
        dem.set_height(1, 1, 0.5);
        assert_eq!(dem.revision(), 1);
        assert!(Dem::from_heights([0.0, 0.0], 1.0, 1, 5, vec![0.0; 5]).is_err());
    }
}
