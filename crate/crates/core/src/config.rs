//! The run configuration document shared by every stage.
//!
//! Every field has a default; the flight defaults are the operating point
//! h = 35 m, fov = 43.10°, d_i = 0.92 m (N = 30), t_p = 0.5 s, t_i = 1/30 s,
//! GPS at 5 Hz.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::flight::CameraSettings;
use crate::occlusion::OcclusionParams;
use crate::sampling::FlightParams;
use crate::scene::IntensityModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub flight: FlightParams,
    pub camera: CameraSettings,
    pub scan: ScanSettings,
    pub forest: ForestSettings,
    pub intensity: IntensityModel,
    pub integral: IntegralConfig,
    pub detector: DetectorConfig,
    pub fusion: FusionSettings,
    pub sweep: SweepSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            flight: FlightParams::default(),
            camera: CameraSettings { resolution: 128, ..CameraSettings::default() },
            scan: ScanSettings::default(),
            forest: ForestSettings::default(),
            intensity: IntensityModel::default(),
            integral: IntegralConfig::default(),
            detector: DetectorConfig::default(),
            fusion: FusionSettings::default(),
            sweep: SweepSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

/// Layout of a simulated scan: a straight track along +x centered on the
/// origin, long enough that persons placed in its interior are seen by every
/// integral the overlap factor promises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    /// Track length beyond two ground coverages, m; the person region spans this length.
    pub interior_length: f64,
    pub persons: usize,
    /// Person footprint radius, m.
    pub person_radius: f64,
    pub min_separation: f64,
    /// Clearance between persons and the swath edge, m.
    pub edge_margin: f64,
    /// Scene border around the swath, m.
    pub scene_margin: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            interior_length: 12.0,
            persons: 4,
            person_radius: 0.5,
            min_separation: 6.0,
            edge_margin: 1.5,
            scene_margin: 1.0,
        }
    }
}

/// Occluder volume of the simulated forest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSettings {
    pub d: f64,
    pub o: f64,
    pub l: f64,
    pub ground_cell: f64,
    pub dem_spacing: f64,
}

impl Default for ForestSettings {
    fn default() -> Self {
        ForestSettings { d: 0.0, o: 0.5, l: 25.0, ground_cell: 0.1, dem_spacing: 2.0 }
    }
}

impl ForestSettings {
    pub fn occlusion(&self) -> Result<OcclusionParams> {
        OcclusionParams::new(self.d, self.o, self.l, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegralConfig {
    pub resolution: usize,
}

impl Default for IntegralConfig {
    fn default() -> Self {
        IntegralConfig { resolution: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    /// Confidence map cell edge, m.
    pub cell_size: f64,
    /// A detection within this distance of a person is true, m.
    pub r_match: f64,
    /// Decision threshold applied to finalized cells.
    pub threshold: f32,
    /// Number of threshold steps for precision/recall.
    pub pr_steps: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings { cell_size: 0.25, r_match: 1.5, threshold: 0.3, pr_steps: 20 }
    }
}

/// Parameter lists swept by the table-producing commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub speeds: Vec<f64>,
    pub densities: Vec<f64>,
    /// Volume heights as multiples of the occluder size.
    pub layers: Vec<f64>,
    pub alphas: Vec<f64>,
    pub rays: usize,
    pub n_values: Vec<usize>,
    pub vertex_counts: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            speeds: vec![1.0, 4.0, 6.0, 10.0],
            densities: vec![0.005, 0.01, 0.05],
            layers: vec![10.0, 50.0, 100.0],
            alphas: vec![0.0, 30.0, 60.0],
            rays: 1_000_000,
            n_values: vec![5, 10, 15, 20, 25, 30],
            vertex_counts: vec![34_000, 2_600_000],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub repetitions: usize,
    pub warmup: usize,
    pub resolution: usize,
    /// Images per integral.
    pub n: usize,
    /// Randomized inputs for the equivalence check.
    pub equivalence_cases: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { repetitions: 10, warmup: 3, resolution: 1024, n: 30, equivalence_cases: 10 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Config(format!("{}: {reason}", path.display())),
            other => other,
        })
    }

    /// Applies one `section.key=value` override; the value is read as TOML and
    /// falls back to a plain string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", value.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed table holds v"),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut doc;
        for part in key.trim().split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))?;
        }
        *slot = value;
        let config: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.flight.validate()?;
        self.forest.occlusion()?;
        self.intensity.validate()?;
        self.detector.validate()?;
        if self.camera.resolution == 0 || self.integral.resolution == 0 {
            return Err(Error::domain("image resolutions must be positive"));
        }
        if !(self.fusion.cell_size > 0.0 && self.fusion.r_match > 0.0) {
            return Err(Error::domain("fusion cell size and match radius must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fusion.threshold) {
            return Err(Error::domain(format!("fusion threshold must lie in [0, 1], got {}", self.fusion.threshold)));
        }
        if self.scan.interior_length < 0.0 || self.scan.edge_margin < 0.0 || self.scan.scene_margin < 0.0 {
            return Err(Error::domain("scan lengths and margins must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_operating_point() {
        let c = RunConfig::default();
        assert_eq!((c.flight.h, c.flight.fov, c.flight.t_p, c.flight.d_i), (35.0, 43.10, 0.5, 0.92));
        assert_eq!(c.flight.t_i, 1.0 / 30.0);
        assert_eq!(c.camera.gps_rate, 5.0);
        assert_eq!(crate::sampling::make_plan(c.flight).unwrap().n, 30);
    }

    #[test]
    fn partial_documents_fill_in_defaults_and_round_trip() {
        let c = RunConfig::from_toml("seed = 9\n[flight]\nv_f = 6.0\n[forest]\nd = 0.05\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.flight.v_f, 6.0);
        assert_eq!(c.flight.h, 35.0);
        assert_eq!(c.forest.d, 0.05);
        let again = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overrides_address_nested_keys() {
        let c = RunConfig::default().with_override("flight.v_f=6").unwrap();
        assert_eq!(c.flight.v_f, 6.0);
        let c = c.with_override("sweep.speeds=[2.0, 3.0]").unwrap();
        assert_eq!(c.sweep.speeds, vec![2.0, 3.0]);
        assert!(matches!(c.with_override("flight.speed=1"), Err(Error::Config(_))));
        assert!(matches!(c.with_override("flight.v_f"), Err(Error::Config(_))));
        assert!(matches!(c.with_override("flight.v_f=-2"), Err(Error::Domain(_))));
    }

    #[test]
    fn bad_documents_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[flight]\nv_f = -1.0"), Err(Error::Domain(_))));
    }
}
