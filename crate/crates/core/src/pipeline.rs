//! End-to-end scans: simulate, integrate, detect, fuse and evaluate.
//!
//! The same functions back the in-process run and the staged commands, so a
//! staged run over files reproduces an in-process run exactly. Integrals are
//! quantized to their on-disk 16-bit levels before detection for that reason.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dem::{Dem, Extent};
use crate::detect::{detect, Detection};
use crate::error::Result;
use crate::flight::{plan_flight, render_frame, FlightPath, FlightRecord};
use crate::fusion::{finalize, project_detections, CellDecision, Combiner, ConfidenceMap};
use crate::integral::{IntegralImage, IntegralSettings, SlidingIntegrals};
use crate::metrics::{match_person, threshold_sweep, AppearanceCounter, EvalReport, Labeled, MethodReport};
use crate::sampling::{make_plan, SamplingPlan};
use crate::scene::{generate_forest, Person, PersonPlacement, Scene, SceneConfig};

/// Geometry of a scan derived from a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub plan: SamplingPlan,
    pub path: FlightPath,
    pub scene: SceneConfig,
    /// Where persons may be placed.
    pub person_region: Extent,
}

pub fn scenario(config: &RunConfig) -> Result<Scenario> {
    config.validate()?;
    let plan = make_plan(config.flight)?;
    let c_f = plan.c_f;
    let scan = &config.scan;
    let half_length = c_f + scan.interior_length / 2.0;
    let path = FlightPath::along_x(-half_length, half_length, 0.0);
    let extent = path.swath(c_f).grown(scan.scene_margin);
    let half_x = scan.interior_length / 2.0;
    let half_y = (c_f / 2.0 - scan.edge_margin).max(0.0);
    let person_region = Extent { x_min: -half_x, x_max: half_x, y_min: -half_y, y_max: half_y };
    let forest = &config.forest;
    let scene = SceneConfig {
        extent,
        occlusion: forest.occlusion()?,
        intensity: config.intensity,
        persons: PersonPlacement {
            count: scan.persons,
            radius: scan.person_radius,
            min_separation: scan.min_separation,
            region: Some(person_region),
        },
        ground_cell: forest.ground_cell,
        dem_spacing: forest.dem_spacing,
    };
    Ok(Scenario { plan, path, scene, person_region })
}

/// Seeds for the scene and the flight, both derived from the run seed.
pub fn stage_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random(), rng.random())
}

/// A simulated world and the flight over it, before any pixel is rendered.
pub struct Simulation {
    pub scenario: Scenario,
    pub scene: Scene,
    pub flight: FlightRecord,
}

pub fn simulate(config: &RunConfig) -> Result<Simulation> {
    let scenario = scenario(config)?;
    let (scene_seed, flight_seed) = stage_seeds(config.seed);
    let scene = generate_forest(&scenario.scene, scene_seed)?;
    let flight = plan_flight(config.flight, scenario.path, config.camera, flight_seed)?;
    Ok(Simulation { scenario, scene, flight })
}

impl Simulation {
    pub fn integral_settings(&self, config: &RunConfig) -> IntegralSettings {
        IntegralSettings { fov: config.flight.fov, resolution: config.integral.resolution }
    }

    /// Integrals of the whole scan, rendering each needed frame once.
    pub fn integrals<'a>(
        &'a self,
        config: &RunConfig,
    ) -> Result<impl Iterator<Item = Result<IntegralImage>> + 'a> {
        let stream = SlidingIntegrals::new(
            self.flight.frame_count(),
            self.flight.frame_spacing(),
            &self.scenario.plan,
            &self.scene.dem,
            self.integral_settings(config),
            move |k| render_frame(&self.scene, &self.flight, k),
        )?;
        Ok(stream.map(|r| r.map(|(_, integral)| integral.quantized())))
    }
}

/// One single-integral detection with its ground position and label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub integral: usize,
    pub detection: Detection,
    pub labeled: Labeled,
}

/// Everything fusion and evaluation produce for one scan.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub detections: Vec<DetectionRecord>,
    pub decisions: Vec<CellDecision>,
    pub map: ConfidenceMap,
}

/// Detects, fuses and evaluates a stream of integrals in scan order.
pub fn evaluate_stream(
    integrals: impl IntoIterator<Item = Result<IntegralImage>>,
    persons: &[Person],
    dem: &Dem,
    plan: &SamplingPlan,
    config: &RunConfig,
) -> Result<Evaluation> {
    let fusion = &config.fusion;
    let mut map = ConfidenceMap::new(dem.extent(), fusion.cell_size, plan.overlap_ceil())?;
    let mut counter = AppearanceCounter::new(persons.len());
    let mut detections = Vec::new();
    let mut decisions = Vec::new();
    let mut last = 0;
    let mut count = 0;
    for (k, integral) in integrals.into_iter().enumerate() {
        let integral = integral?;
        let dets = detect(&integral, &config.detector)?;
        counter.add(persons, &integral, &dets, dem);
        let boxes = project_detections(&mut map, &integral, k, &dets, dem);
        for (d, b) in dets.iter().zip(&boxes) {
            let x = (b.rect.x_min + b.rect.x_max) / 2.0;
            let y = (b.rect.y_min + b.rect.y_max) / 2.0;
            let person = match_person(persons, x, y, fusion.r_match);
            detections.push(DetectionRecord {
                integral: k,
                detection: *d,
                labeled: Labeled { x, y, score: d.score, person },
            });
        }
        decisions.extend(finalize(&mut map, k, false));
        last = k;
        count += 1;
    }
    decisions.extend(finalize(&mut map, last + 1, true));

    let thresholds = threshold_sweep(fusion.pr_steps);
    let mut methods = std::collections::BTreeMap::new();
    let single: Vec<Labeled> = detections.iter().map(|d| d.labeled).collect();
    methods.insert("single".to_string(), MethodReport::from_labeled(&single, persons.len(), &thresholds));
    for method in Combiner::ALL {
        let fused = crate::metrics::label_fused(&map, method, persons, fusion.r_match);
        methods.insert(method.name().to_string(), MethodReport::from_labeled(&fused, persons.len(), &thresholds));
    }
    let report = EvalReport {
        persons: persons.len(),
        integrals: count,
        methods,
        appearances: counter.detected,
        coverage: counter.visible,
    };
    Ok(Evaluation { report, detections, decisions, map })
}

/// A complete in-process scan.
pub struct ScanRun {
    pub simulation: Simulation,
    pub evaluation: Evaluation,
}

pub fn run_scan(config: &RunConfig) -> Result<ScanRun> {
    let simulation = simulate(config)?;
    let evaluation = evaluate_stream(
        simulation.integrals(config)?,
        &simulation.scene.persons,
        &simulation.scene.dem,
        &simulation.scenario.plan,
        config,
    )?;
    Ok(ScanRun { simulation, evaluation })
}
