//! Score-level fusion of detections across overlapping integrals.
//!
//! Every detection box is projected onto a DEM-aligned grid. Each integral
//! that sees a cell adds one score to it: the best detection covering the cell,
//! or 0 when none does. Once a cell has been seen by as many integrals as the
//! overlap factor allows, its scores are combined and the cell is finalized.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dem::{Dem, Extent};
use crate::detect::{Aabb, Detection};
use crate::error::{ensure_positive, Error, Result};
use crate::integral::IntegralImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Maximum,
    Median,
    MaxMedian,
}

impl Combiner {
    pub const ALL: [Combiner; 3] = [Combiner::Maximum, Combiner::Median, Combiner::MaxMedian];

    pub fn name(self) -> &'static str {
        match self {
            Combiner::Maximum => "maximum",
            Combiner::Median => "median",
            Combiner::MaxMedian => "max_median",
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_scores(scores: &[f32]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::domain("cannot combine an empty score list"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::domain(format!("scores must lie in [0, 1], got {s}")));
    }
    Ok(())
}

fn max_and_median(scores: &[f32]) -> (f32, f32) {
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        ((sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0) as f32
    };
    (sorted[n - 1], median)
}

/// Combines the scores a cell collected.
pub fn combine(scores: &[f32], method: Combiner) -> Result<f32> {
    Ok(combine_all(scores)?.get(method))
}

/// All three combinations of one score list.
pub fn combine_all(scores: &[f32]) -> Result<Combined> {
    check_scores(scores)?;
    let (maximum, median) = max_and_median(scores);
    Ok(Combined { maximum, median, max_median: maximum * median })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Combined {
    pub maximum: f32,
    pub median: f32,
    pub max_median: f32,
}

impl Combined {
    pub fn get(&self, method: Combiner) -> f32 {
        match method {
            Combiner::Maximum => self.maximum,
            Combiner::Median => self.median,
            Combiner::MaxMedian => self.max_median,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cell {
    /// Most recent scores, at most the map's capacity.
    pub scores: VecDeque<f32>,
    pub coverage: u32,
    pub first_seen: Option<usize>,
    /// Set once the cell is finalized.
    pub combined: Option<Combined>,
    pub partial: bool,
}

/// A finalized cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellDecision {
    pub ix: usize,
    pub iy: usize,
    /// Cell center, m.
    pub x: f64,
    pub y: f64,
    pub coverage: u32,
    pub first_seen: usize,
    /// Finalized before collecting every expected score.
    pub partial: bool,
    pub combined: Combined,
}

impl CellDecision {
    pub fn positive(&self, method: Combiner, tau: f32) -> bool {
        self.combined.get(method) >= tau
    }
}

/// A detection box projected onto the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundBox {
    pub rect: Extent,
    pub score: f32,
}

#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    extent: Extent,
    cell_size: f64,
    nx: usize,
    ny: usize,
    capacity: usize,
    cells: Vec<Cell>,
    clipped_boxes: usize,
}

impl ConfidenceMap {
    /// An all-zero map over `extent`; cells keep at most `capacity` scores,
    /// normally the overlap factor rounded up.
    pub fn new(extent: Extent, cell_size: f64, capacity: usize) -> Result<Self> {
        ensure_positive("cell size", cell_size)?;
        if capacity == 0 {
            return Err(Error::domain("cells must be able to hold at least one score"));
        }
        let nx = (extent.width() / cell_size).ceil().max(1.0) as usize;
        let ny = (extent.height() / cell_size).ceil().max(1.0) as usize;
        Ok(ConfidenceMap {
            extent,
            cell_size,
            nx,
            ny,
            capacity,
            cells: vec![Cell::default(); nx * ny],
            clipped_boxes: 0,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    /// Boxes that reached beyond the map and were clipped.
    pub fn clipped_boxes(&self) -> usize {
        self.clipped_boxes
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &Cell {
        &self.cells[iy * self.nx + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.extent.x_min + (ix as f64 + 0.5) * self.cell_size,
            self.extent.y_min + (iy as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cell containing `(x, y)`.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.extent.contains(x, y) {
            return None;
        }
        let ix = (((x - self.extent.x_min) / self.cell_size) as usize).min(self.nx - 1);
        let iy = (((y - self.extent.y_min) / self.cell_size) as usize).min(self.ny - 1);
        Some((ix, iy))
    }

    /// Cell index range overlapping `rect`, clipped to the map.
    fn cell_range(&self, rect: &Extent) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        if !rect.intersects(&self.extent) {
            return None;
        }
        let to_index = |v: f64, min: f64, n: usize| (((v - min) / self.cell_size).floor().max(0.0) as usize).min(n);
        let x0 = to_index(rect.x_min, self.extent.x_min, self.nx);
        let x1 = (to_index(rect.x_max, self.extent.x_min, self.nx) + 1).min(self.nx);
        let y0 = to_index(rect.y_min, self.extent.y_min, self.ny);
        let y1 = (to_index(rect.y_max, self.extent.y_min, self.ny) + 1).min(self.ny);
        Some((x0..x1, y0..y1))
    }

    /// Combined values of every finalized cell for `method`, row-major with
    /// row 0 at the northern edge; unfinalized cells read 0.
    pub fn raster(&self, method: Combiner) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in (0..self.ny).rev() {
            for ix in 0..self.nx {
                out.push(self.cell(ix, iy).combined.map_or(0.0, |c| c.get(method)));
            }
        }
        out
    }
}

/// Projects a pixel box onto the DEM, returning the ground rectangle it covers.
/// Corners that miss the DEM fall back to the plane at height 0.
pub fn project_aabb(aabb: &Aabb, integral: &IntegralImage, dem: &Dem) -> Extent {
    let camera = integral.camera();
    let origin = camera.origin();
    let corners = [
        (aabb.col_min as f64, aabb.row_min as f64),
        ((aabb.col_max + 1) as f64, aabb.row_min as f64),
        (aabb.col_min as f64, (aabb.row_max + 1) as f64),
        ((aabb.col_max + 1) as f64, (aabb.row_max + 1) as f64),
    ];
    let mut rect = Extent { x_min: f64::INFINITY, x_max: f64::NEG_INFINITY, y_min: f64::INFINITY, y_max: f64::NEG_INFINITY };
    for (u, v) in corners {
        let p = dem
            .intersect_ray(origin, camera.direction(u, v))
            .unwrap_or_else(|| camera.hit_plane(u, v, 0.0));
        rect.x_min = rect.x_min.min(p[0]);
        rect.x_max = rect.x_max.max(p[0]);
        rect.y_min = rect.y_min.min(p[1]);
        rect.y_max = rect.y_max.max(p[1]);
    }
    rect
}

/// Adds one integral's evidence to the map.
///
/// Every cell whose center the integral sees gains one score: the highest
/// score of the projected boxes containing that center, otherwise 0.
/// Cells already finalized are left alone.
pub fn project_detections(
    map: &mut ConfidenceMap,
    integral: &IntegralImage,
    integral_index: usize,
    detections: &[Detection],
    dem: &Dem,
) -> Vec<GroundBox> {
    let boxes: Vec<GroundBox> = detections
        .iter()
        .map(|d| GroundBox { rect: project_aabb(&d.aabb, integral, dem), score: d.score })
        .collect();
    map.clipped_boxes += boxes.iter().filter(|b| !map.extent.contains_extent(&b.rect)).count();

    let camera = integral.camera();
    let [cx, cy, _] = camera.origin();
    let half = camera.footprint_width(0.0) / 2.0 * 1.1;
    let footprint = Extent { x_min: cx - half, x_max: cx + half, y_min: cy - half, y_max: cy + half };
    let Some((xs, ys)) = map.cell_range(&footprint) else {
        return boxes;
    };
    let capacity = map.capacity;
    for iy in ys {
        for ix in xs.clone() {
            let [x, y] = map.cell_center(ix, iy);
            let z = dem.height_at(x, y).unwrap_or(0.0);
            let seen = camera
                .pixel_of([x, y, z])
                .is_some_and(|(col, row)| integral.is_valid(row * integral.resolution + col));
            if !seen {
                continue;
            }
            let score = boxes
                .iter()
                .filter(|b| b.rect.contains(x, y))
                .map(|b| b.score)
                .fold(0.0f32, f32::max);
            let cell = &mut map.cells[iy * map.nx + ix];
            if cell.combined.is_some() {
                continue;
            }
            cell.coverage += 1;
            cell.first_seen.get_or_insert(integral_index);
            cell.scores.push_back(score);
            if cell.scores.len() > capacity {
                cell.scores.pop_front();
            }
        }
    }
    boxes
}

/// Finalizes the cells that are ripe at integral `current`: those first seen
/// at least `capacity` integrals ago, or every covered cell once the scan ended.
pub fn finalize(map: &mut ConfidenceMap, current: usize, scan_ended: bool) -> Vec<CellDecision> {
    let capacity = map.capacity;
    let nx = map.nx;
    let mut decisions = Vec::new();
    for (i, cell) in map.cells.iter_mut().enumerate() {
        let Some(first_seen) = cell.first_seen else { continue };
        if cell.combined.is_some() {
            continue;
        }
        let ripe = current.saturating_sub(first_seen) >= capacity;
        if !(ripe || scan_ended) {
            continue;
        }
        let combined = combine_all(cell.scores.make_contiguous()).expect("covered cells hold valid scores");
        cell.combined = Some(combined);
        cell.partial = !ripe && (cell.coverage as usize) < capacity;
        let (ix, iy) = (i % nx, i / nx);
        let [x, y] = [
            map.extent.x_min + (ix as f64 + 0.5) * map.cell_size,
            map.extent.y_min + (iy as f64 + 0.5) * map.cell_size,
        ];
        decisions.push(CellDecision {
            ix,
            iy,
            x,
            y,
            coverage: cell.coverage,
            first_seen,
            partial: cell.partial,
            combined,
        });
    }
    decisions
}
