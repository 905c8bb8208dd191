//! Procedural forest scenes and the thermal pinhole forward model.
//!
//! Occluders are spheres of diameter `o` (seen as a disk from any direction)
//! whose centers form a Poisson process in the slab `0 <= z <= l` above a DEM.
//! The process intensity realizes the per-size blocking probability `d` of
//! [`OcclusionParams`], so nadir rays are blocked with probability
//! `1 - (1 - d)^(l/o)`. Persons are hot disks lying on the ground.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Pose};
use crate::dem::{Dem, Extent};
use crate::error::{ensure_positive, Error, Result};
use crate::occlusion::OcclusionParams;

/// Radiometric constants of the simulated thermal scene, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityModel {
    /// Returned by rays that leave the scene extent.
    pub ambient: f32,
    pub occluder: f32,
    pub ground: f32,
    /// Half-width of the uniform per-cell ground noise.
    pub ground_noise: f32,
    pub person: f32,
    /// Fraction of occluders that are sun-warmed and read hotter than `occluder`.
    pub warm_fraction: f64,
    pub warm_min: f32,
    pub warm_max: f32,
    /// Warm occluders only occur with centers at least this high, m.
    pub warm_min_height: f64,
}

impl Default for IntensityModel {
    fn default() -> Self {
        IntensityModel {
            ambient: 0.15,
            occluder: 0.15,
            ground: 0.10,
            ground_noise: 0.02,
            person: 1.0,
            warm_fraction: 0.03,
            warm_min: 0.4,
            warm_max: 0.9,
            warm_min_height: 0.0,
        }
    }
}

impl IntensityModel {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f32| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} intensity must lie in [0, 1], got {v}")))
            }
        };
        unit("ambient", self.ambient)?;
        unit("occluder", self.occluder)?;
        unit("ground", self.ground - self.ground_noise)?;
        unit("ground", self.ground + self.ground_noise)?;
        unit("person", self.person)?;
        unit("warm occluder", self.warm_min)?;
        unit("warm occluder", self.warm_max)?;
        if !(0.0..=1.0).contains(&self.warm_fraction) || self.warm_min > self.warm_max {
            return Err(Error::domain("warm occluder fraction must lie in [0, 1] with warm_min <= warm_max"));
        }
        Ok(())
    }
}

/// How persons are scattered over the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonPlacement {
    pub count: usize,
    /// Footprint radius, m.
    pub radius: f64,
    /// Minimum center-to-center distance, m.
    pub min_separation: f64,
    /// Region for person centers; the whole extent when absent.
    pub region: Option<Extent>,
}

impl Default for PersonPlacement {
    fn default() -> Self {
        PersonPlacement {
            count: 0,
            radius: 0.5,
            min_separation: 6.0,
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub extent: Extent,
    pub occlusion: OcclusionParams,
    #[serde(default)]
    pub intensity: IntensityModel,
    #[serde(default)]
    pub persons: PersonPlacement,
    /// Edge length of a ground texture cell, m.
    #[serde(default = "default_ground_cell")]
    pub ground_cell: f64,
    /// Vertex spacing of the DEM mesh, m.
    #[serde(default = "default_dem_spacing")]
    pub dem_spacing: f64,
}

fn default_ground_cell() -> f64 {
    0.1
}

fn default_dem_spacing() -> f64 {
    2.0
}

impl SceneConfig {
    pub fn new(extent: Extent, occlusion: OcclusionParams) -> Self {
        SceneConfig {
            extent,
            occlusion,
            intensity: IntensityModel::default(),
            persons: PersonPlacement::default(),
            ground_cell: default_ground_cell(),
            dem_spacing: default_dem_spacing(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: [f64; 3],
    pub diameter: f64,
    pub intensity: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub position: [f64; 2],
    pub radius: f64,
    pub intensity: f32,
}

/// Per-cell base intensity of the ground.
#[derive(Debug, Clone)]
pub struct GroundTexture {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    intensity: Vec<f32>,
}

impl GroundTexture {
    fn generate(extent: &Extent, cell: f64, model: &IntensityModel, rng: &mut ChaCha8Rng) -> Self {
        let nx = (extent.width() / cell).ceil() as usize;
        let ny = (extent.height() / cell).ceil() as usize;
        let noise = model.ground_noise;
        let intensity = (0..nx * ny)
            .map(|_| {
                let jitter = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
                (model.ground + jitter).clamp(0.0, 1.0)
            })
            .collect();
        GroundTexture { origin: [extent.x_min, extent.y_min], cell, nx, ny, intensity }
    }

    pub fn at(&self, x: f64, y: f64) -> Option<f32> {
        let i = ((x - self.origin[0]) / self.cell).floor();
        let j = ((y - self.origin[1]) / self.cell).floor();
        if i < 0.0 || j < 0.0 || i as usize >= self.nx || j as usize >= self.ny {
            return None;
        }
        Some(self.intensity[j as usize * self.nx + i as usize])
    }
}

/// Occluders bucketed by height layer (thickness `o`) and ground cell (edge `o`).
#[derive(Debug, Clone)]
struct OccluderIndex {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    layers: usize,
    offsets: Vec<u32>,
    order: Vec<u32>,
}

impl OccluderIndex {
    fn build(extent: &Extent, cell: f64, height: f64, occluders: &[Occluder]) -> Self {
        let nx = (extent.width() / cell).ceil() as usize + 1;
        let ny = (extent.height() / cell).ceil() as usize + 1;
        let layers = ((height / cell).ceil() as usize).max(1);
        let origin = [extent.x_min, extent.y_min];
        let key = |o: &Occluder| {
            let i = (((o.center[0] - origin[0]) / cell) as usize).min(nx - 1);
            let j = (((o.center[1] - origin[1]) / cell) as usize).min(ny - 1);
            let k = ((o.center[2] / cell) as usize).min(layers - 1);
            (k * ny + j) * nx + i
        };
        let mut order: Vec<u32> = (0..occluders.len() as u32).collect();
        order.sort_by_key(|&idx| key(&occluders[idx as usize]));
        let mut offsets = vec![0u32; layers * nx * ny + 1];
        for o in occluders {
            offsets[key(o) + 1] += 1;
        }
        for i in 1..offsets.len() {
            offsets[i] += offsets[i - 1];
        }
        OccluderIndex { origin, cell, nx, ny, layers, offsets, order }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub seed: u64,
    pub dem: Dem,
    pub ground: GroundTexture,
    pub occluders: Vec<Occluder>,
    pub persons: Vec<Person>,
    index: OccluderIndex,
}

/// Generates a forest scene. Deterministic in `(config, seed)`.
pub fn generate_forest(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.occlusion.validate()?;
    config.intensity.validate()?;
    ensure_positive("ground cell size", config.ground_cell)?;
    let extent = config.extent;
    let o = config.occlusion.o;
    if extent.width() <= 2.0 * o || extent.height() <= 2.0 * o {
        return Err(Error::domain(format!(
            "scene extent {:.2} x {:.2} m is too small for occluders of size {o} m",
            extent.width(),
            extent.height()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground = GroundTexture::generate(&extent, config.ground_cell, &config.intensity, &mut rng);
    let occluders = scatter_occluders(config, &mut rng);
    let persons = place_persons(config, &mut rng)?;
    let dem = Dem::flat(&extent, config.dem_spacing)?;
    let index = OccluderIndex::build(&extent, o, config.occlusion.l, &occluders);
    Ok(Scene { config: config.clone(), seed, dem, ground, occluders, persons, index })
}

fn scatter_occluders(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Occluder> {
    let p = &config.occlusion;
    let model = &config.intensity;
    let radius = p.o / 2.0;
    if p.d == 0.0 || p.l == 0.0 {
        return Vec::new();
    }
    // Expected number of centers within `radius` of a unit-length path is -ln(1 - d) / o.
    let per_volume = -(1.0 - p.d).ln() / (p.o * PI * radius * radius);
    let mean = per_volume * config.extent.area() * p.l;
    let count = Poisson::new(mean).map(|dist| dist.sample(rng) as usize).unwrap_or(0);
    (0..count)
        .map(|_| {
            let center = [
                rng.random_range(config.extent.x_min..config.extent.x_max),
                rng.random_range(config.extent.y_min..config.extent.y_max),
                rng.random_range(0.0..p.l),
            ];
            let warm = rng.random::<f64>() < model.warm_fraction && center[2] >= model.warm_min_height;
            let intensity = if warm {
                rng.random_range(model.warm_min..=model.warm_max)
            } else {
                model.occluder
            };
            Occluder { center, diameter: p.o, intensity }
        })
        .collect()
}

fn place_persons(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Person>> {
    let spec = &config.persons;
    if spec.count == 0 {
        return Ok(Vec::new());
    }
    ensure_positive("person radius", spec.radius)?;
    let region = spec.region.unwrap_or(config.extent);
    let mut persons: Vec<Person> = Vec::with_capacity(spec.count);
    let mut attempts = 0;
    while persons.len() < spec.count {
        attempts += 1;
        if attempts > 10_000 * spec.count {
            return Err(Error::domain(format!(
                "cannot place {} persons {} m apart in the person region",
                spec.count, spec.min_separation
            )));
        }
        let position = [
            rng.random_range(region.x_min..=region.x_max),
            rng.random_range(region.y_min..=region.y_max),
        ];
        let far_enough = persons.iter().all(|q| {
            let dx = q.position[0] - position[0];
            let dy = q.position[1] - position[1];
            (dx * dx + dy * dy).sqrt() >= spec.min_separation
        });
        if far_enough {
            persons.push(Person { position, radius: spec.radius, intensity: config.intensity.person });
        }
    }
    Ok(persons)
}

/// Result of tracing one camera ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayHit {
    Occluder { index: usize, point: [f64; 3] },
    Person { index: usize, point: [f64; 3] },
    Ground { point: [f64; 3] },
    /// The ray left the scene without reaching its ground.
    Outside,
}

impl Scene {
    pub fn extent(&self) -> Extent {
        self.config.extent
    }

    /// Traces a ray from `origin` (above the occluder volume) along `dir` (`dir.z < 0`).
    pub fn trace(&self, origin: [f64; 3], dir: [f64; 3]) -> RayHit {
        let Some(ground) = self.dem.intersect_ray(origin, dir) else {
            return RayHit::Outside;
        };
        let ground_t = (origin[2] - ground[2]) / -dir[2];
        if let Some((index, t)) = self.first_occluder(origin, dir, ground_t) {
            let point = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            return RayHit::Occluder { index, point };
        }
        for (index, person) in self.persons.iter().enumerate() {
            let dx = ground[0] - person.position[0];
            let dy = ground[1] - person.position[1];
            if dx * dx + dy * dy <= person.radius * person.radius {
                return RayHit::Person { index, point: ground };
            }
        }
        RayHit::Ground { point: ground }
    }

    /// Nearest occluder hit before ray parameter `t_max`, as `(index, t)`.
    fn first_occluder(&self, origin: [f64; 3], dir: [f64; 3], t_max: f64) -> Option<(usize, f64)> {
        if self.occluders.is_empty() {
            return None;
        }
        let idx = &self.index;
        let r = self.config.occlusion.o / 2.0;
        let r2 = r * r;
        let dir_len2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
        let xy_at = |z: f64| {
            let t = (origin[2] - z) / -dir[2];
            [origin[0] + t * dir[0], origin[1] + t * dir[1]]
        };
        let mut best: Option<(usize, f64)> = None;
        let mut layers_after_hit = 0;
        for k in (0..idx.layers).rev() {
            if best.is_some() {
                // Spheres two layers below a hit cannot reach above it.
                if layers_after_hit == 1 {
                    break;
                }
                layers_after_hit += 1;
            }
            let z_lo = k as f64 * idx.cell - r;
            let z_hi = (k + 1) as f64 * idx.cell + r;
            let a = xy_at(z_lo);
            let b = xy_at(z_hi);
            let cell_range = |lo: f64, hi: f64, origin: f64, n: usize| {
                let first = ((lo - r - origin) / idx.cell).floor().max(0.0) as usize;
                let last = ((hi + r - origin) / idx.cell).floor();
                if last < 0.0 {
                    return (1, 0);
                }
                (first, (last as usize).min(n - 1))
            };
            let (i0, i1) = cell_range(a[0].min(b[0]), a[0].max(b[0]), idx.origin[0], idx.nx);
            let (j0, j1) = cell_range(a[1].min(b[1]), a[1].max(b[1]), idx.origin[1], idx.ny);
            for j in j0..=j1.min(idx.ny - 1) {
                for i in i0..=i1.min(idx.nx - 1) {
                    let cell = (k * idx.ny + j) * idx.nx + i;
                    let range = idx.offsets[cell] as usize..idx.offsets[cell + 1] as usize;
                    for &oi in &idx.order[range] {
                        let c = self.occluders[oi as usize].center;
                        let rel = [c[0] - origin[0], c[1] - origin[1], c[2] - origin[2]];
                        let along = (rel[0] * dir[0] + rel[1] * dir[1] + rel[2] * dir[2]) / dir_len2;
                        let closest2 = {
                            let q = [rel[0] - along * dir[0], rel[1] - along * dir[1], rel[2] - along * dir[2]];
                            q[0] * q[0] + q[1] * q[1] + q[2] * q[2]
                        };
                        if closest2 > r2 {
                            continue;
                        }
                        let half_chord = ((r2 - closest2) / dir_len2).sqrt();
                        let t = along - half_chord;
                        if t <= 0.0 || t >= t_max {
                            continue;
                        }
                        if best.is_none_or(|(_, bt)| t < bt) {
                            best = Some((oi as usize, t));
                        }
                    }
                }
            }
        }
        best
    }

    /// Radiance seen along a traced ray.
    pub fn intensity_of(&self, hit: RayHit) -> f32 {
        match hit {
            RayHit::Occluder { index, .. } => self.occluders[index].intensity,
            RayHit::Person { index, .. } => self.persons[index].intensity,
            RayHit::Ground { point } => self.ground.at(point[0], point[1]).unwrap_or(self.config.intensity.ambient),
            RayHit::Outside => self.config.intensity.ambient,
        }
    }
}

/// A rendered frame. Intensities are quantized to 16-bit levels, like the sensor's output.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleImage {
    pub pixels: Vec<f32>,
    pub resolution: usize,
    pub pose: Pose,
    pub fov: f64,
    /// Pixels whose ray left the scene and got the ambient intensity.
    pub outside_pixels: usize,
}

impl SingleImage {
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.resolution + col]
    }

    pub fn camera(&self) -> Camera {
        Camera::new(self.pose, self.fov, self.resolution).expect("image camera was validated at render time")
    }
}

/// Rounds an intensity in `[0, 1]` to the nearest 16-bit level.
pub fn quantize16(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

/// Renders what a nadir camera at `pose` sees: the nearest occluder along each
/// pixel's central ray, otherwise the person or ground radiance where the ray
/// meets the DEM.
pub fn render_single_image(scene: &Scene, pose: Pose, fov: f64, resolution: usize) -> Result<SingleImage> {
    let camera = Camera::new(pose, fov, resolution)?;
    if pose.position[2] <= scene.config.occlusion.l {
        return Err(Error::domain(format!(
            "camera altitude {} m is inside the occluder volume (height {} m)",
            pose.position[2], scene.config.occlusion.l
        )));
    }
    let origin = camera.origin();
    let rows: Vec<(Vec<f32>, usize)> = (0..resolution)
        .into_par_iter()
        .map(|row| {
            let mut outside = 0;
            let values = (0..resolution)
                .map(|col| {
                    let hit = scene.trace(origin, camera.pixel_direction(col, row));
                    if hit == RayHit::Outside {
                        outside += 1;
                    }
                    quantize16(scene.intensity_of(hit))
                })
                .collect();
            (values, outside)
        })
        .collect();
    let outside_pixels = rows.iter().map(|(_, n)| n).sum();
    let pixels = rows.into_iter().flat_map(|(v, _)| v).collect();
    Ok(SingleImage { pixels, resolution, pose, fov, outside_pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::integrated_density;

    fn open_config(extent: Extent) -> SceneConfig {
        SceneConfig::new(extent, OcclusionParams::new(0.0, 0.5, 25.0, 0.0).unwrap())
    }

    #[test]
    fn empty_forest_has_no_occluders() {
        let scene = generate_forest(&open_config(Extent::centered(40.0, 40.0).unwrap()), 1).unwrap();
        assert!(scene.occluders.is_empty());
        let hit = scene.trace([0.0, 0.0, 35.0], [0.0, 0.0, -1.0]);
        assert!(matches!(hit, RayHit::Ground { .. }));
    }

    #[test]
    fn tiny_extent_is_rejected() {
        let config = open_config(Extent::centered(0.8, 40.0).unwrap());
        assert!(matches!(generate_forest(&config, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let mut config = SceneConfig::new(
            Extent::centered(30.0, 30.0).unwrap(),
            OcclusionParams::new(0.02, 0.5, 10.0, 0.0).unwrap(),
        );
        config.persons.count = 3;
        let a = generate_forest(&config, 42).unwrap();
        let b = generate_forest(&config, 42).unwrap();
        assert_eq!(a.occluders, b.occluders);
        assert_eq!(a.persons, b.persons);
        let c = generate_forest(&config, 43).unwrap();
        assert_ne!(a.occluders, c.occluders);
        for o in &a.occluders {
            assert!((0.0..=10.0).contains(&o.center[2]));
            assert!((0.0..=1.0).contains(&o.intensity));
        }
    }

    #[test]
    fn vertical_block_fraction_matches_density() {
        let config = SceneConfig::new(
            Extent::centered(60.0, 60.0).unwrap(),
            OcclusionParams::new(0.01, 0.5, 25.0, 0.0).unwrap(),
        );
        let expected = integrated_density(&config.occlusion).unwrap().value();
        assert!((expected - 0.395).abs() < 0.001);
        let scene = generate_forest(&config, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rays = 100_000;
        let blocked = (0..rays)
            .filter(|_| {
                let x = rng.random_range(-25.0..25.0);
                let y = rng.random_range(-25.0..25.0);
                matches!(scene.trace([x, y, 35.0], [0.0, 0.0, -1.0]), RayHit::Occluder { .. })
            })
            .count();
        let fraction = blocked as f64 / rays as f64;
        assert!((fraction - expected).abs() < 0.02, "fraction {fraction}");
    }

    #[test]
    fn person_at_nadir_is_visible_and_footprint_matches() {
        let mut config = open_config(Extent::centered(60.0, 60.0).unwrap());
        config.persons = PersonPlacement {
            count: 1,
            radius: 1.0,
            min_separation: 1.0,
            region: Some(Extent::centered(0.001, 0.001).unwrap()),
        };
        let scene = generate_forest(&config, 3).unwrap();
        let img = render_single_image(&scene, Pose::new(0.0, 0.0, 35.0, 0.0), 43.1, 128).unwrap();
        assert_eq!(img.get(64, 64), 1.0);
        assert_eq!(img.get(0, 0).max(0.08), img.get(0, 0));
        assert!(img.get(0, 0) < 0.2);
        // Person diameter 2 m over a 27.64 m footprint is ~9.3 pixels across.
        let across = (0..128).filter(|&c| img.get(c, 64) == 1.0).count();
        let gsd = 2.0 * 35.0 * 21.55f64.to_radians().tan() / 128.0;
        assert!((across as f64 - 2.0 / gsd).abs() <= 1.0, "across {across}");
        assert_eq!(img.outside_pixels, 0);
    }

    #[test]
    fn large_occluder_hides_person() {
        let mut config = open_config(Extent::centered(40.0, 40.0).unwrap());
        config.persons = PersonPlacement {
            count: 1,
            radius: 0.5,
            min_separation: 1.0,
            region: Some(Extent::centered(0.001, 0.001).unwrap()),
        };
        let mut scene = generate_forest(&config, 3).unwrap();
        scene.config.occlusion = OcclusionParams::new(0.0, 6.0, 12.0, 0.0).unwrap();
        scene.occluders = vec![Occluder { center: [0.0, 0.0, 10.0], diameter: 6.0, intensity: 0.15 }];
        scene.index = OccluderIndex::build(&scene.config.extent, 6.0, 12.0, &scene.occluders);
        let img = render_single_image(&scene, Pose::new(0.0, 0.0, 35.0, 0.0), 43.1, 64).unwrap();
        assert_eq!(img.get(32, 32), quantize16(0.15));
    }

    #[test]
    fn rays_leaving_the_scene_are_flagged() {
        let scene = generate_forest(&open_config(Extent::centered(10.0, 10.0).unwrap()), 1).unwrap();
        let img = render_single_image(&scene, Pose::new(0.0, 0.0, 35.0, 0.0), 43.1, 32).unwrap();
        assert!(img.outside_pixels > 0);
        assert_eq!(img.get(0, 0), quantize16(0.15));
    }

    #[test]
    fn camera_inside_volume_is_rejected() {
        let config = SceneConfig::new(
            Extent::centered(30.0, 30.0).unwrap(),
            OcclusionParams::new(0.01, 0.5, 25.0, 0.0).unwrap(),
        );
        let scene = generate_forest(&config, 1).unwrap();
        assert!(render_single_image(&scene, Pose::new(0.0, 0.0, 20.0, 0.0), 43.1, 16).is_err());
    }
}
