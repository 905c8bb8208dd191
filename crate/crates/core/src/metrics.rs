//! Evaluation against ground truth: separation ratios, score curves,
//! per-person appearance counts and precision/recall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dem::Dem;
use crate::detect::{Aabb, Detection};
use crate::error::{Error, Result};
use crate::fusion::{CellDecision, Combiner, ConfidenceMap};
use crate::integral::IntegralImage;
use crate::scene::Person;

/// Minimum true score over maximum false score.
///
/// Infinite without false detections (a threshold trivially separates) and 0
/// without true ones. Values above 1 mean one threshold keeps every true
/// detection and rejects every false one.
pub fn separation_ratio(true_scores: &[f32], false_scores: &[f32]) -> f64 {
    let Some(min_true) = true_scores.iter().copied().reduce(f32::min) else {
        return 0.0;
    };
    let max_false = false_scores.iter().copied().fold(0.0f32, f32::max);
    if false_scores.is_empty() || max_false == 0.0 {
        return f64::INFINITY;
    }
    min_true as f64 / max_false as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    /// Ascending.
    pub scores: Vec<f32>,
    /// Largest step between consecutive scores.
    pub max_gradient: f32,
}

pub fn score_curve(scores: &[f32]) -> Result<ScoreCurve> {
    if scores.len() < 2 {
        return Err(Error::domain("a score curve needs at least two scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let max_gradient = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f32::max);
    Ok(ScoreCurve { scores: sorted, max_gradient })
}

/// A scored detection with its ground position and truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub x: f64,
    pub y: f64,
    pub score: f32,
    /// Person this detection is attributed to, if any.
    pub person: Option<usize>,
}

impl Labeled {
    pub fn is_true(&self) -> bool {
        self.person.is_some()
    }
}

/// Nearest person within `r_match` of `(x, y)`.
pub fn match_person(persons: &[Person], x: f64, y: f64, r_match: f64) -> Option<usize> {
    persons
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p.position[0] - x).hypot(p.position[1] - y)))
        .filter(|&(_, d)| d <= r_match)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Groups positive finalized cells (combined value above `tau`) into
/// 8-connected blobs, one detection per blob located at and scored by its peak.
pub fn fused_detections(map: &ConfidenceMap, method: Combiner, tau: f32) -> Vec<(f64, f64, f32)> {
    let (nx, ny) = map.dims();
    let value = |ix: usize, iy: usize| map.cell(ix, iy).combined.map(|c| c.get(method)).unwrap_or(0.0);
    let mut seen = vec![false; nx * ny];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..nx * ny {
        let (sx, sy) = (start % nx, start / nx);
        if seen[start] || value(sx, sy) <= tau {
            continue;
        }
        seen[start] = true;
        stack.push((sx, sy));
        let mut peak = (sx, sy, value(sx, sy));
        while let Some((ix, iy)) = stack.pop() {
            let v = value(ix, iy);
            if v > peak.2 {
                peak = (ix, iy, v);
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    let (jx, jy) = (jx as usize, jy as usize);
                    let j = jy * nx + jx;
                    if !seen[j] && value(jx, jy) > tau {
                        seen[j] = true;
                        stack.push((jx, jy));
                    }
                }
            }
        }
        let [x, y] = map.cell_center(peak.0, peak.1);
        out.push((x, y, peak.2));
    }
    out
}

/// Labels fused detections of `method`.
pub fn label_fused(map: &ConfidenceMap, method: Combiner, persons: &[Person], r_match: f64) -> Vec<Labeled> {
    fused_detections(map, method, 0.0)
        .into_iter()
        .map(|(x, y, score)| Labeled { x, y, score, person: match_person(persons, x, y, r_match) })
        .collect()
}

/// Labels finalized cells individually.
pub fn label_cells(decisions: &[CellDecision], persons: &[Person], r_match: f64) -> Vec<Option<usize>> {
    decisions.iter().map(|d| match_person(persons, d.x, d.y, r_match)).collect()
}

/// Pixel box covering a person's disk in `integral`, and whether its center is
/// inside the integral's valid footprint.
pub fn person_in_integral(person: &Person, integral: &IntegralImage, ground_z: f64) -> Option<Aabb> {
    let camera = integral.camera();
    let [x, y] = person.position;
    let (col, row) = camera.pixel_of([x, y, ground_z])?;
    if !integral.is_valid(row * integral.resolution + col) {
        return None;
    }
    let r = person.radius;
    let [u0, v0] = camera.project([x - r, y + r, ground_z])?;
    let [u1, v1] = camera.project([x + r, y - r, ground_z])?;
    let max = (integral.resolution - 1) as f64;
    let clamp = |v: f64| v.clamp(0.0, max) as usize;
    Aabb::new(clamp(u0), clamp(v0), clamp(u1), clamp(v1)).ok()
}

/// Accumulates, per person, the integrals that see the person and contain a
/// detection overlapping them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppearanceCounter {
    /// Integrals whose footprint contains the person.
    pub visible: Vec<u32>,
    /// Of those, integrals with a detection on the person.
    pub detected: Vec<u32>,
}

impl AppearanceCounter {
    pub fn new(persons: usize) -> Self {
        AppearanceCounter { visible: vec![0; persons], detected: vec![0; persons] }
    }

    pub fn add(&mut self, persons: &[Person], integral: &IntegralImage, detections: &[Detection], dem: &Dem) {
        for (i, person) in persons.iter().enumerate() {
            let ground_z = dem.height_at(person.position[0], person.position[1]).unwrap_or(0.0);
            if let Some(footprint) = person_in_integral(person, integral, ground_z) {
                self.visible[i] += 1;
                if detections.iter().any(|d| d.aabb.intersects(&footprint)) {
                    self.detected[i] += 1;
                }
            }
        }
    }
}

/// Appearance counts over a whole stream of `(integral, detections)`.
pub fn count_appearances<'a>(
    persons: &[Person],
    stream: impl IntoIterator<Item = (&'a IntegralImage, &'a [Detection])>,
    dem: &Dem,
) -> Vec<u32> {
    let mut counter = AppearanceCounter::new(persons.len());
    for (integral, detections) in stream {
        counter.add(persons, integral, detections, dem);
    }
    counter.detected
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f32,
    pub precision: f64,
    pub recall: f64,
}

/// Precision over detections and recall over persons, at each threshold.
/// Precision is 1 when nothing passes the threshold.
pub fn precision_recall(detections: &[Labeled], persons: usize, thresholds: &[f32]) -> Vec<PrPoint> {
    thresholds
        .iter()
        .map(|&threshold| {
            let kept: Vec<&Labeled> = detections.iter().filter(|d| d.score >= threshold).collect();
            let true_kept = kept.iter().filter(|d| d.is_true()).count();
            let mut found: Vec<usize> = kept.iter().filter_map(|d| d.person).collect();
            found.sort_unstable();
            found.dedup();
            PrPoint {
                threshold,
                precision: if kept.is_empty() { 1.0 } else { true_kept as f64 / kept.len() as f64 },
                recall: if persons == 0 { 1.0 } else { found.len() as f64 / persons as f64 },
            }
        })
        .collect()
}

/// Evenly spaced thresholds `0, 1/steps, ..., 1`.
pub fn threshold_sweep(steps: usize) -> Vec<f32> {
    (0..=steps).map(|i| i as f32 / steps.max(1) as f32).collect()
}

mod ratio_format {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Number(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid ratio {t:?}"))),
        }
    }
}

/// Evaluation of one scoring method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    /// Written as the string `"inf"` when infinite.
    #[serde(with = "ratio_format")]
    pub separation_ratio: f64,
    pub true_detections: usize,
    pub false_detections: usize,
    pub min_true_score: Option<f32>,
    pub max_false_score: Option<f32>,
    pub max_gradient: Option<f32>,
    pub curve: Vec<f32>,
    pub precision_recall: Vec<PrPoint>,
}

impl MethodReport {
    pub fn from_labeled(detections: &[Labeled], persons: usize, thresholds: &[f32]) -> Self {
        let (trues, falses): (Vec<&Labeled>, Vec<&Labeled>) = detections.iter().partition(|d| d.is_true());
        let true_scores: Vec<f32> = trues.iter().map(|d| d.score).collect();
        let false_scores: Vec<f32> = falses.iter().map(|d| d.score).collect();
        let all: Vec<f32> = detections.iter().map(|d| d.score).collect();
        let curve = score_curve(&all).ok();
        MethodReport {
            separation_ratio: separation_ratio(&true_scores, &false_scores),
            true_detections: trues.len(),
            false_detections: falses.len(),
            min_true_score: true_scores.iter().copied().reduce(f32::min),
            max_false_score: false_scores.iter().copied().reduce(f32::max),
            max_gradient: curve.as_ref().map(|c| c.max_gradient),
            curve: curve.map(|c| c.scores).unwrap_or(all),
            precision_recall: precision_recall(detections, persons, thresholds),
        }
    }
}

/// Evaluation of a whole scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub persons: usize,
    pub integrals: usize,
    /// Keyed by `single` and the combiner names.
    pub methods: BTreeMap<String, MethodReport>,
    /// Integrals with a detection on each person.
    pub appearances: Vec<u32>,
    /// Integrals whose footprint contained each person.
    pub coverage: Vec<u32>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.get(name)
    }
}
