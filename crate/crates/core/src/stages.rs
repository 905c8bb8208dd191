//! The batch stages behind the `aos` commands. Each stage reads the run
//! configuration (and, for later stages, the files written by earlier ones),
//! writes its artifacts into an output directory and reports its checks.
//!
//! Layout of an output directory:
//!
//! ```text
//! plan.csv                       plan
//! occlusion.csv                  occlusion
//! config.toml scene.json dem.json persons.csv poses.csv gps.csv frames/   simulate
//! integrals/ coverage.csv [bench.csv equivalence.csv]                     integrate
//! detections.csv decisions.csv maps/ report.json                          fuse-eval
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{bench_rendering, check_equivalence, linear_r_squared, BenchPlan, BenchRow, Renderer};
use crate::camera::Pose;
use crate::config::RunConfig;
use crate::dem::Dem;
use crate::error::{Error, Result};
use crate::flight::{frame_count, render_frame, GpsFix};
use crate::fusion::Combiner;
use crate::integral::{IntegralImage, SlidingIntegrals};
use crate::io::{self, DemFile};
use crate::occlusion::{integrated_density, mc_occlusion_oracle, oblique_density, oblique_density_direct, OcclusionParams};
use crate::pipeline::{evaluate_stream, scenario, simulate, stage_seeds, Evaluation, Scenario};
use crate::sampling::{make_plan, sweep_speeds, SamplingPlan};
use crate::scene::Person;

/// One named pass/fail check of a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutcome {
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
}

impl StageOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn wrote(&mut self, path: PathBuf) {
        self.files.push(path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub v_f: f64,
    pub d_f: f64,
    pub c_f: f64,
    pub o_f: f64,
    pub n: usize,
    pub t_f: f64,
    pub e_i_max: f64,
    pub gap_warning: bool,
    pub stale_warning: bool,
}

impl From<&SamplingPlan> for PlanRow {
    fn from(p: &SamplingPlan) -> Self {
        PlanRow {
            v_f: p.params.v_f,
            d_f: p.d_f,
            c_f: p.c_f,
            o_f: p.o_f,
            n: p.n,
            t_f: p.t_f,
            e_i_max: p.e_i_max,
            gap_warning: p.warnings.gap,
            stale_warning: p.warnings.stale_integrals,
        }
    }
}

const PLAN_HEADER: [&str; 9] = ["v_f", "d_f", "c_f", "o_f", "n", "t_f", "e_i_max", "gap_warning", "stale_warning"];

pub fn plan_rows(config: &RunConfig) -> Result<Vec<PlanRow>> {
    Ok(sweep_speeds(config.flight, &config.sweep.speeds)?.iter().map(PlanRow::from).collect())
}

/// Sampling quantities for every swept speed.
pub fn run_plan(config: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let rows = plan_rows(config)?;
    let mut outcome = StageOutcome::default();
    let path = out.join("plan.csv");
    io::write_csv(&path, &PLAN_HEADER, &rows)?;
    outcome.wrote(path);
    let gaps: Vec<f64> = rows.iter().filter(|r| r.gap_warning).map(|r| r.v_f).collect();
    outcome.checks.push(Check::new(
        "integrals overlap",
        gaps.is_empty(),
        if gaps.is_empty() { "o_f >= 1 at every speed".to_string() } else { format!("gaps at speeds {gaps:?}") },
    ));
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    pub d: f64,
    pub o: f64,
    pub l: f64,
    pub alpha: f64,
    /// Nadir integrated density.
    pub d_bar: f64,
    /// Oblique density from the nadir density.
    pub d_bar_alpha: f64,
    /// Oblique density from the per-size density directly.
    pub d_bar_alpha_direct: f64,
    pub oracle: f64,
    pub abs_error: f64,
}

const OCCLUSION_HEADER: [&str; 9] = ["d", "o", "l", "alpha", "d_bar", "d_bar_alpha", "d_bar_alpha_direct", "oracle", "abs_error"];

/// Closed forms against the Monte-Carlo oracle over the swept grid.
pub fn occlusion_rows(config: &RunConfig, seed: u64) -> Result<Vec<OcclusionRow>> {
    let sweep = &config.sweep;
    let o = config.forest.o;
    let mut rows = Vec::new();
    for &d in &sweep.densities {
        for &layers in &sweep.layers {
            for &alpha in &sweep.alphas {
                let params = OcclusionParams::new(d, o, layers * o, alpha)?;
                let d_bar = integrated_density(&params)?;
                let tilted = oblique_density(d_bar, alpha)?.value();
                let oracle = mc_occlusion_oracle(seed.wrapping_add(rows.len() as u64), &params, sweep.rays)?;
                rows.push(OcclusionRow {
                    d,
                    o,
                    l: params.l,
                    alpha,
                    d_bar: d_bar.value(),
                    d_bar_alpha: tilted,
                    d_bar_alpha_direct: oblique_density_direct(&params)?.value(),
                    oracle,
                    abs_error: (tilted - oracle).abs(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn run_occlusion(config: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let rows = occlusion_rows(config, config.seed)?;
    let mut outcome = StageOutcome::default();
    let path = out.join("occlusion.csv");
    io::write_csv(&path, &OCCLUSION_HEADER, &rows)?;
    outcome.wrote(path);
    let worst = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    outcome.checks.push(Check::new(
        "formula matches oracle",
        worst <= 0.01,
        format!("largest |formula - oracle| = {worst:.4} over {} rows", rows.len()),
    ));
    let identity = rows
        .iter()
        .map(|r| (r.d_bar_alpha - r.d_bar_alpha_direct).abs() / r.d_bar_alpha_direct.abs().max(f64::MIN_POSITIVE))
        .filter(|e| e.is_finite())
        .fold(0.0, f64::max);
    outcome.checks.push(Check::new(
        "two-step and direct oblique forms agree",
        identity <= 1e-12,
        format!("largest relative difference {identity:.2e}"),
    ));
    Ok(outcome)
}

/// Ground truth and layout written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub seed: u64,
    pub scene_seed: u64,
    pub flight_seed: u64,
    pub scenario: Scenario,
    pub frames: usize,
    pub occluders: usize,
    pub persons: Vec<Person>,
    /// Shutter delay used to render; not available to later stages.
    pub capture_delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PoseRow {
    frame: usize,
    timestamp: f64,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PersonRow {
    person: usize,
    x: f64,
    y: f64,
    radius: f64,
    intensity: f32,
}

pub fn frame_name(k: usize) -> String {
    format!("frame_{k:05}.pgm")
}

pub fn integral_stem(k: usize) -> String {
    format!("integral_{k:04}")
}

/// Renders every frame of the scan and writes it with poses and ground truth.
pub fn run_simulate(config: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let sim = simulate(config)?;
    let mut outcome = StageOutcome::default();
    let (scene_seed, flight_seed) = stage_seeds(config.seed);

    let path = out.join("config.toml");
    std::fs::create_dir_all(out)?;
    std::fs::write(&path, config.to_toml()?)?;
    outcome.wrote(path);

    let record = SceneRecord {
        seed: config.seed,
        scene_seed,
        flight_seed,
        scenario: sim.scenario.clone(),
        frames: sim.flight.frame_count(),
        occluders: sim.scene.occluders.len(),
        persons: sim.scene.persons.clone(),
        capture_delay: sim.flight.capture_delay,
    };
    let path = out.join("scene.json");
    io::write_json(&path, &record)?;
    outcome.wrote(path);
    let path = out.join("dem.json");
    io::write_json(&path, &DemFile::from_dem(&sim.scene.dem))?;
    outcome.wrote(path);

    let persons = sim.scene.persons.iter().enumerate().map(|(i, p)| PersonRow {
        person: i,
        x: p.position[0],
        y: p.position[1],
        radius: p.radius,
        intensity: p.intensity,
    });
    let path = out.join("persons.csv");
    io::write_csv(&path, &["person", "x", "y", "radius", "intensity"], persons)?;
    outcome.wrote(path);

    let poses = sim.flight.poses.iter().enumerate().map(|(k, p)| PoseRow {
        frame: k,
        timestamp: p.timestamp,
        x: p.position[0],
        y: p.position[1],
        z: p.position[2],
    });
    let path = out.join("poses.csv");
    io::write_csv(&path, &["frame", "timestamp", "x", "y", "z"], poses)?;
    outcome.wrote(path);
    let fixes = sim.flight.fixes.iter().map(|f: &GpsFix| (f.timestamp, f.position[0], f.position[1], f.position[2]));
    let path = out.join("gps.csv");
    io::write_csv(&path, &["timestamp", "x", "y", "z"], fixes)?;
    outcome.wrote(path);

    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let mut worst_error: f64 = 0.0;
    for k in 0..sim.flight.frame_count() {
        let frame = render_frame(&sim.scene, &sim.flight, k)?;
        io::write_frame(&frames_dir.join(frame_name(k)), &frame)?;
        let truth = sim.flight.true_poses[k].position;
        let registered = frame.pose.position;
        worst_error = worst_error.max((truth[0] - registered[0]).hypot(truth[1] - registered[1]));
    }
    outcome.wrote(frames_dir);

    let expected = frame_count(sim.scenario.path.length(), config.flight.frame_spacing());
    outcome.checks.push(Check::new(
        "frame count",
        sim.flight.frame_count() == expected,
        format!("{} frames over {:.2} m", sim.flight.frame_count(), sim.scenario.path.length()),
    ));
    let bound = sim.scenario.plan.e_i_max;
    outcome.checks.push(Check::new(
        "registration error bounded",
        worst_error <= bound + 1e-9,
        format!("largest pose error {worst_error:.4} m, bound {bound:.4} m"),
    ));
    Ok(outcome)
}

fn read_poses(out: &Path) -> Result<Vec<Pose>> {
    let rows: Vec<PoseRow> = io::read_csv(&out.join("poses.csv"))?;
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            if r.frame != k {
                return Err(Error::Format { path: out.join("poses.csv"), reason: format!("row {k} holds frame {}", r.frame) });
            }
            Ok(Pose::new(r.x, r.y, r.z, r.timestamp))
        })
        .collect()
}

fn read_dem(out: &Path) -> Result<Dem> {
    io::read_json::<DemFile>(&out.join("dem.json"))?.into_dem()
}

/// How many integrals see each interior ground point along the track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub x: f64,
    pub y: f64,
    pub integrals: u32,
}

/// Integral count of ground points `step` meters apart along the track
/// center, restricted to points at least one coverage from either end.
pub struct CoverageProbe {
    points: Vec<[f64; 3]>,
    counts: Vec<u32>,
}

impl CoverageProbe {
    pub fn new(scenario: &Scenario, dem: &Dem, step: f64) -> Self {
        let path = &scenario.path;
        let c_f = scenario.plan.c_f;
        let usable = path.length() - 2.0 * c_f;
        let steps = if usable > 0.0 { (usable / step).floor() as usize + 1 } else { 0 };
        let points = (0..steps)
            .map(|i| {
                let [x, y] = path.point_at(c_f + i as f64 * step);
                [x, y, dem.height_at(x, y).unwrap_or(0.0)]
            })
            .collect::<Vec<_>>();
        let counts = vec![0; points.len()];
        CoverageProbe { points, counts }
    }

    pub fn add(&mut self, integral: &IntegralImage) {
        let camera = integral.camera();
        for (p, count) in self.points.iter().zip(&mut self.counts) {
            if let Some((col, row)) = camera.pixel_of(*p) {
                if integral.is_valid(row * integral.resolution + col) {
                    *count += 1;
                }
            }
        }
    }

    pub fn rows(&self) -> Vec<CoverageRow> {
        self.points.iter().zip(&self.counts).map(|(p, &c)| CoverageRow { x: p[0], y: p[1], integrals: c }).collect()
    }
}

/// Integrates the frames written by `simulate`; with `bench` also times and
/// compares both renderers.
pub fn run_integrate(config: &RunConfig, out: &Path, bench: bool) -> Result<StageOutcome> {
    let scenario = scenario(config)?;
    let plan = scenario.plan;
    let dem = read_dem(out)?;
    let poses = read_poses(out)?;
    let settings = crate::integral::IntegralSettings { fov: config.flight.fov, resolution: config.integral.resolution };
    let frames_dir = out.join("frames");
    let fov = config.flight.fov;
    let fetch = |k: usize| io::read_frame(&frames_dir.join(frame_name(k)), poses[k], fov);
    let stream = SlidingIntegrals::new(poses.len(), config.flight.frame_spacing(), &plan, &dem, settings, fetch)?;

    let mut outcome = StageOutcome::default();
    let dir = out.join("integrals");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    let mut probe = CoverageProbe::new(&scenario, &dem, 0.5);
    let mut count = 0;
    for item in stream {
        let (k, integral) = item?;
        let integral = integral.quantized();
        probe.add(&integral);
        io::write_integral(&dir, &integral_stem(k), k, &integral)?;
        count += 1;
    }
    outcome.wrote(dir);
    let rows = probe.rows();
    let path = out.join("coverage.csv");
    io::write_csv(&path, &["x", "y", "integrals"], &rows)?;
    outcome.wrote(path);
    let (lo, hi) = (plan.overlap_floor() as u32, plan.overlap_ceil() as u32);
    let off: Vec<&CoverageRow> = rows.iter().filter(|r| r.integrals < lo || r.integrals > hi).collect();
    outcome.checks.push(Check::new(
        "ground coverage matches overlap",
        count > 0 && off.is_empty(),
        format!("{count} integrals; {} of {} probe points outside [{lo}, {hi}]", off.len(), rows.len()),
    ));

    if bench {
        let (bench_outcome, _) = run_bench(config, out)?;
        outcome.files.extend(bench_outcome.files);
        outcome.checks.extend(bench_outcome.checks);
    }
    Ok(outcome)
}

/// Summary of a rendering benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    pub classical_growth: f64,
    pub deferred_growth: f64,
    pub r_squared: f64,
}

pub fn summarize_bench(rows: &[BenchRow], n: usize, vertex_counts: &[usize]) -> Result<BenchSummary> {
    let mean = |renderer: Renderer, n: usize, vertices: usize| {
        rows.iter()
            .find(|r| r.renderer == renderer && r.n == n && r.vertices == vertices)
            .map(|r| r.mean_ms)
            .ok_or_else(|| Error::domain(format!("no {renderer:?} timing for N = {n}, {vertices} vertices")))
    };
    let mut actual: Vec<usize> = rows.iter().map(|r| r.vertices).collect();
    actual.sort_unstable();
    actual.dedup();
    if actual.len() < 2 || vertex_counts.len() < 2 {
        return Err(Error::domain("growth needs at least two DEM sizes"));
    }
    let (small, large) = (actual[0], actual[actual.len() - 1]);
    let growth = |renderer| Ok::<_, Error>(mean(renderer, n, large)? / mean(renderer, n, small)?);
    let mut series: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.renderer == Renderer::Classical && r.vertices == small)
        .map(|r| (r.n as f64, r.mean_ms))
        .collect();
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xs, ys): (Vec<f64>, Vec<f64>) = series.into_iter().unzip();
    Ok(BenchSummary {
        rows: rows.to_vec(),
        classical_growth: growth(Renderer::Classical)?,
        deferred_growth: growth(Renderer::Deferred)?,
        r_squared: linear_r_squared(&xs, &ys)?,
    })
}

/// Runs the renderer equivalence check and the timing table.
pub fn run_bench(config: &RunConfig, out: &Path) -> Result<(StageOutcome, BenchSummary)> {
    let b = &config.bench;
    let mut outcome = StageOutcome::default();
    let cases = check_equivalence(b.equivalence_cases, 96, config.seed)?;
    let path = out.join("equivalence.csv");
    io::write_csv(&path, &["case", "vertices", "n", "max_abs_diff", "same_coverage"], &cases)?;
    outcome.wrote(path);
    let worst = cases.iter().map(|c| c.max_abs_diff).fold(0.0, f64::max);
    outcome.checks.push(Check::new(
        "deferred equals classical",
        cases.iter().all(|c| c.passes(1e-6)),
        format!("{} cases, largest difference {worst:.2e}", cases.len()),
    ));

    let plan = BenchPlan {
        repetitions: b.repetitions,
        warmup: b.warmup,
        resolution: b.resolution,
        fov: config.flight.fov,
        altitude: config.flight.h,
        spacing: config.flight.d_i,
        ..BenchPlan::default()
    };
    // Growth is measured at N for every DEM size; the N sweep only at the smallest.
    let sizes = &config.sweep.vertex_counts;
    let mut rows = bench_rendering(&[b.n], sizes, &plan, config.seed)?;
    let smallest = sizes.iter().copied().min().unwrap_or(0);
    let others: Vec<usize> = config.sweep.n_values.iter().copied().filter(|&n| n != b.n).collect();
    if !others.is_empty() {
        rows.extend(bench_rendering(&others, &[smallest], &plan, config.seed)?);
    }
    let path = out.join("bench.csv");
    io::write_csv(&path, &["renderer", "n", "vertices", "mean_ms", "std_ms", "repetitions"], &rows)?;
    outcome.wrote(path);
    let summary = summarize_bench(&rows, b.n, sizes)?;
    outcome.checks.push(Check::new(
        "classical time grows with DEM size",
        summary.classical_growth >= 3.0,
        format!("x{:.2}", summary.classical_growth),
    ));
    outcome.checks.push(Check::new(
        "deferred time stays flat with DEM size",
        summary.deferred_growth <= 1.5,
        format!("x{:.2}", summary.deferred_growth),
    ));
    outcome.checks.push(Check::new(
        "classical time is linear in N",
        summary.r_squared > 0.9,
        format!("R^2 = {:.4}", summary.r_squared),
    ));
    Ok((outcome, summary))
}

/// Reads the integrals written by `integrate`, in index order.
pub fn read_integrals(out: &Path) -> Result<impl Iterator<Item = Result<IntegralImage>>> {
    let dir = out.join("integrals");
    let mut stems: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|name| name.starts_with("integral_") && name.ends_with(".json"))
        .map(|name| name.trim_end_matches(".json").to_string())
        .collect();
    stems.sort();
    Ok(stems.into_iter().enumerate().map(move |(k, stem)| {
        let (meta, integral) = io::read_integral(&dir, &stem)?;
        if meta.index != k {
            return Err(Error::Format { path: dir.join(&stem), reason: format!("expected integral {k}, found {}", meta.index) });
        }
        Ok(integral)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DetectionRow {
    integral: usize,
    col_min: usize,
    row_min: usize,
    col_max: usize,
    row_max: usize,
    pixels: usize,
    score: f32,
    x: f64,
    y: f64,
    truth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DecisionRow {
    integral: usize,
    x: f64,
    y: f64,
    method: Combiner,
    score: f32,
    decision: bool,
    truth: bool,
    coverage: u32,
    partial: bool,
}

/// Writes the tables, maps and report of an evaluation.
pub fn write_evaluation(eval: &Evaluation, persons: &[Person], config: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let mut outcome = StageOutcome::default();
    let rows = eval.detections.iter().map(|d| DetectionRow {
        integral: d.integral,
        col_min: d.detection.aabb.col_min,
        row_min: d.detection.aabb.row_min,
        col_max: d.detection.aabb.col_max,
        row_max: d.detection.aabb.row_max,
        pixels: d.detection.pixels,
        score: d.detection.score,
        x: d.labeled.x,
        y: d.labeled.y,
        truth: d.labeled.is_true(),
    });
    let path = out.join("detections.csv");
    io::write_csv(
        &path,
        &["integral", "col_min", "row_min", "col_max", "row_max", "pixels", "score", "x", "y", "truth"],
        rows,
    )?;
    outcome.wrote(path);

    // Cells that never received a nonzero score are negative under every
    // combiner and are left out.
    let tau = config.fusion.threshold;
    let r_match = config.fusion.r_match;
    let mut decisions = Vec::new();
    for d in eval.decisions.iter().filter(|d| d.combined.maximum > 0.0) {
        let truth = crate::metrics::match_person(persons, d.x, d.y, r_match).is_some();
        for method in Combiner::ALL {
            decisions.push(DecisionRow {
                integral: d.first_seen,
                x: d.x,
                y: d.y,
                method,
                score: d.combined.get(method),
                decision: d.positive(method, tau),
                truth,
                coverage: d.coverage,
                partial: d.partial,
            });
        }
    }
    let path = out.join("decisions.csv");
    io::write_csv(
        &path,
        &["integral", "x", "y", "method", "score", "decision", "truth", "coverage", "partial"],
        decisions,
    )?;
    outcome.wrote(path);

    let (nx, ny) = eval.map.dims();
    for method in Combiner::ALL {
        let path = out.join("maps").join(format!("confidence_{method}.pgm"));
        io::write_unit_raster(&path, nx, ny, &eval.map.raster(method))?;
        outcome.wrote(path);
    }
    let path = out.join("report.json");
    io::write_json(&path, &eval.report)?;
    outcome.wrote(path);

    let ratio = |name: &str| eval.report.method(name).map_or(0.0, |m| m.separation_ratio);
    outcome.checks.push(Check::new(
        "fusion separates detections",
        eval.report.persons == 0 || ratio("max_median") > 1.0,
        format!("separation ratio single {:.3}, max*median {:.3}", ratio("single"), ratio("max_median")),
    ));
    Ok(outcome)
}

/// Detects, fuses and evaluates the integrals written by `integrate`.
pub fn run_fuse_eval(config: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let scenario = scenario(config)?;
    let dem = read_dem(out)?;
    let persons: Vec<Person> = io::read_json::<SceneRecord>(&out.join("scene.json"))?.persons;
    let plan = make_plan(config.flight)?;
    debug_assert_eq!(plan, scenario.plan);
    let eval = evaluate_stream(read_integrals(out)?, &persons, &dem, &plan, config)?;
    write_evaluation(&eval, &persons, config, out)
}
