//! A thresholding blob detector for integral images.
//!
//! Pixels are scored by their contrast over the ground baseline, normalized
//! so the person intensity maps to 1. Pixels at or above `tau_det` are grouped
//! into 8-connected components, and each large enough component becomes one
//! detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integral::IntegralImage;

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aabb {
    pub col_min: usize,
    pub row_min: usize,
    pub col_max: usize,
    pub row_max: usize,
}

impl Aabb {
    pub fn new(col_min: usize, row_min: usize, col_max: usize, row_max: usize) -> Result<Self> {
        if col_min > col_max || row_min > row_max {
            return Err(Error::domain("empty bounding box"));
        }
        Ok(Aabb { col_min, row_min, col_max, row_max })
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        (self.col_min..=self.col_max).contains(&col) && (self.row_min..=self.row_max).contains(&row)
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        self.col_min <= other.col_max
            && other.col_min <= self.col_max
            && self.row_min <= other.row_max
            && other.row_min <= self.row_max
    }

    fn grow(&mut self, col: usize, row: usize) {
        self.col_min = self.col_min.min(col);
        self.col_max = self.col_max.max(col);
        self.row_min = self.row_min.min(row);
        self.row_max = self.row_max.max(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub aabb: Aabb,
    /// Confidence in `[0, 1]`.
    pub score: f32,
    /// Pixels in the component.
    pub pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Normalized contrast a pixel needs to join a blob.
    pub tau_det: f32,
    /// Smallest blob kept, in pixels.
    pub min_area: usize,
    /// Intensity that scores 1. In occluded integrals persons blend with the
    /// occluders in front of them, so this is set to the expected blend there.
    pub person_intensity: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { tau_det: 0.35, min_area: 4, person_intensity: 1.0 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_det) {
            return Err(Error::domain(format!("tau_det must lie in [0, 1], got {}", self.tau_det)));
        }
        if self.min_area == 0 {
            return Err(Error::domain("min_area must be at least one pixel"));
        }
        if !(self.person_intensity > 0.0 && self.person_intensity <= 1.0) {
            return Err(Error::domain(format!(
                "person intensity must lie in (0, 1], got {}",
                self.person_intensity
            )));
        }
        Ok(())
    }
}

/// Median of the valid pixels, the intensity of "nothing there".
pub fn ground_baseline(integral: &IntegralImage) -> Option<f32> {
    let mut valid: Vec<f32> = integral
        .pixels
        .iter()
        .zip(&integral.counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&p, _)| p)
        .collect();
    if valid.is_empty() {
        return None;
    }
    let mid = valid.len() / 2;
    let (_, median, _) = valid.select_nth_unstable_by(mid, f32::total_cmp);
    Some(*median)
}

/// Detects warm blobs, in raster order of their first pixel.
pub fn detect(integral: &IntegralImage, config: &DetectorConfig) -> Result<Vec<Detection>> {
    config.validate()?;
    let Some(baseline) = ground_baseline(integral) else {
        return Ok(Vec::new());
    };
    let span = config.person_intensity - baseline;
    if span <= 0.0 {
        // Nothing can be warmer than the reference.
        return Ok(Vec::new());
    }
    let res = integral.resolution;
    let contrast = |i: usize| (integral.pixels[i] - baseline) / span;
    let hot: Vec<bool> = (0..res * res).map(|i| integral.is_valid(i) && contrast(i) >= config.tau_det).collect();

    let mut seen = vec![false; res * res];
    let mut stack = Vec::new();
    let mut detections = Vec::new();
    for start in 0..res * res {
        if !hot[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut aabb = Aabb { col_min: start % res, row_min: start / res, col_max: start % res, row_max: start / res };
        let mut sum = 0.0f64;
        let mut pixels = 0;
        while let Some(i) = stack.pop() {
            let (col, row) = (i % res, i / res);
            aabb.grow(col, row);
            sum += contrast(i) as f64;
            pixels += 1;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (c, r) = (col as i64 + dc, row as i64 + dr);
                    if c < 0 || r < 0 || c >= res as i64 || r >= res as i64 {
                        continue;
                    }
                    let j = r as usize * res + c as usize;
                    if hot[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if pixels >= config.min_area {
            let score = ((sum / pixels as f64) as f32).clamp(0.0, 1.0);
            detections.push(Detection { aabb, score, pixels });
        }
    }
    Ok(detections)
}
