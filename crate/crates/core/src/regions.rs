//! Adaptive region selection.
//!
//! Local maxima of the normalized map are found with a 3x3, stride-1 window
//! on the native `l x l` grid (border cells compare only against the
//! neighbours that exist). Maxima sharing a value and a window are kept once,
//! greedily in row-major order. Survivors above a per-scale threshold become
//! square patches centred on the corresponding pixel, shifted inside the image
//! when they would overflow it.

use std::cmp::Ordering;
use std::fmt;

use ndarray::Array2;

use crate::dismap::DisMap;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPeak {
    pub gx: usize,
    pub gy: usize,
    pub score: f64,
}

impl GridPeak {
    fn chebyshev(&self, other: &GridPeak) -> usize {
        self.gx.abs_diff(other.gx).max(self.gy.abs_diff(other.gy))
    }
}

/// Descending score, then `(gy, gx)` ascending.
pub fn peak_order(a: &GridPeak, b: &GridPeak) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.gy.cmp(&b.gy))
        .then(a.gx.cmp(&b.gx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LocalScale {
    Coarse,
    Fine,
}

impl LocalScale {
    pub const ALL: [LocalScale; 2] = [LocalScale::Coarse, LocalScale::Fine];

    /// Fraction of the image area covered by one patch.
    pub fn area_fraction(self) -> f64 {
        match self {
            LocalScale::Coarse => 0.25,
            LocalScale::Fine => 0.0625,
        }
    }

    /// Patch side for an image: `round(sqrt(area_fraction) * min(W, H))`.
    pub fn side(self, width: u32, height: u32) -> u32 {
        let side = (self.area_fraction().sqrt() * f64::from(width.min(height))).round() as u32;
        side.max(1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LocalScale::Coarse => "coarse",
            LocalScale::Fine => "fine",
        }
    }
}

impl fmt::Display for LocalScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub t_coarse: f64,
    pub t_fine: f64,
    pub fallback_on_empty: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            t_coarse: 150.0,
            t_fine: 100.0,
            fallback_on_empty: true,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("t_coarse", self.t_coarse), ("t_fine", self.t_fine)] {
            if !(0.0..=255.0).contains(&t) {
                return Err(Error::Config(format!("{name} = {t} is outside [0, 255]")));
            }
            // Scores never exceed 255, so T = 255 selects nothing.
            if !self.fallback_on_empty && t >= 255.0 {
                return Err(Error::Config(format!(
                    "{name} = {t} can select no regions; fallback_on_empty = false requires T < 255"
                )));
            }
        }
        Ok(())
    }

    pub fn threshold(&self, scale: LocalScale) -> f64 {
        match scale {
            LocalScale::Coarse => self.t_coarse,
            LocalScale::Fine => self.t_fine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub left: u32,
    pub top: u32,
    pub side: u32,
    pub scale: LocalScale,
    pub score: f64,
    pub source_peak: Option<GridPeak>,
}

impl Patch {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.left..self.left + self.side).contains(&x) && (self.top..self.top + self.side).contains(&y)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.left + self.side <= width && self.top + self.side <= height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub image_id: String,
    pub patches: Vec<Patch>,
    /// `(t_coarse, t_fine)` when the set came from adaptive selection.
    pub thresholds: Option<(f64, f64)>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn count(&self, scale: LocalScale) -> usize {
        self.patches.iter().filter(|p| p.scale == scale).count()
    }

    pub fn of_scale(&self, scale: LocalScale) -> impl Iterator<Item = &Patch> {
        self.patches.iter().filter(move |p| p.scale == scale)
    }
}

/// Cells whose value is `>=` every existing 8-neighbour, after equal-value
/// deduplication, sorted by [`peak_order`].
pub fn find_local_maxima(grid: &Array2<f64>) -> Result<Vec<GridPeak>> {
    let (rows, cols) = grid.dim();
    if rows < 3 || cols < 3 {
        return Err(Error::GridTooSmall { rows, cols });
    }
    let mut candidates = Vec::new();
    for gy in 0..rows {
        for gx in 0..cols {
            let v = grid[[gy, gx]];
            let mut is_max = true;
            'window: for ny in gy.saturating_sub(1)..=(gy + 1).min(rows - 1) {
                for nx in gx.saturating_sub(1)..=(gx + 1).min(cols - 1) {
                    if grid[[ny, nx]] > v {
                        is_max = false;
                        break 'window;
                    }
                }
            }
            if is_max {
                candidates.push(GridPeak { gx, gy, score: v });
            }
        }
    }
    let mut peaks = dedup_equal_peaks(candidates);
    peaks.sort_by(peak_order);
    Ok(peaks)
}

/// Row-major greedy scan: a candidate is dropped when an already kept
/// candidate has the same score within Chebyshev distance 1.
pub fn dedup_equal_peaks(mut candidates: Vec<GridPeak>) -> Vec<GridPeak> {
    candidates.sort_by(|a, b| a.gy.cmp(&b.gy).then(a.gx.cmp(&b.gx)));
    let mut kept: Vec<GridPeak> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let redundant = kept
            .iter()
            .any(|k| k.score == c.score && k.chebyshev(&c) <= 1);
        if !redundant {
            kept.push(c);
        }
    }
    kept
}

/// Peaks scoring strictly above `t`. With `fallback`, an empty result is
/// replaced by the single best peak.
pub fn threshold_peaks(peaks: &[GridPeak], t: f64, fallback: bool) -> Vec<GridPeak> {
    let kept: Vec<GridPeak> = peaks.iter().copied().filter(|p| p.score > t).collect();
    if kept.is_empty() && fallback {
        return peaks.iter().copied().min_by(peak_order).into_iter().collect();
    }
    kept
}

/// Pixel centre of grid cell `(gx, gy)` on a `W x H` image:
/// `(floor((gx + 0.5) W / l), floor((gy + 0.5) H / l))`.
pub fn grid_to_pixel(peak: &GridPeak, l: usize, width: u32, height: u32) -> (u32, u32) {
    let map = |g: usize, size: u32| ((g as f64 + 0.5) * f64::from(size) / l as f64).floor() as u32;
    (map(peak.gx, width), map(peak.gy, height))
}

/// Square patch of the scale's side centred at `(cx, cy)`, shifted to lie
/// inside the image.
pub fn crop_patch(center: (u32, u32), scale: LocalScale, width: u32, height: u32) -> Result<Patch> {
    let (cx, cy) = center;
    if cx >= width || cy >= height {
        return Err(Error::CenterOutside {
            cx,
            cy,
            width,
            height,
        });
    }
    let side = scale.side(width, height);
    if side > width.min(height) {
        return Err(Error::PatchTooLarge {
            side,
            width,
            height,
        });
    }
    let place = |c: u32, size: u32| -> u32 {
        let desired = i64::from(c) - i64::from(side / 2);
        desired.clamp(0, i64::from(size - side)) as u32
    };
    Ok(Patch {
        left: place(cx, width),
        top: place(cy, height),
        side,
        scale,
        score: 0.0,
        source_peak: None,
    })
}

/// Full adaptive selection for one image: coarse patches first, then fine,
/// each in [`peak_order`].
pub fn select_regions(
    dismap: &DisMap,
    config: &SelectionConfig,
    width: u32,
    height: u32,
    image_id: impl Into<String>,
) -> Result<RegionSet> {
    config.validate()?;
    let peaks = find_local_maxima(&dismap.normalized)?;
    let l = dismap.grid_size();
    let mut patches = Vec::new();
    for scale in LocalScale::ALL {
        for peak in threshold_peaks(&peaks, config.threshold(scale), config.fallback_on_empty) {
            let centre = grid_to_pixel(&peak, l, width, height);
            let mut patch = crop_patch(centre, scale, width, height)?;
            patch.score = peak.score;
            patch.source_peak = Some(peak);
            patches.push(patch);
        }
    }
    Ok(RegionSet {
        image_id: image_id.into(),
        patches,
        thresholds: Some((config.t_coarse, config.t_fine)),
    })
}
