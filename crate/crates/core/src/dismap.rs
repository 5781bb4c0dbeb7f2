//! Discriminative maps: the class-weighted sum of a DisNet's activation maps,
//! and its min-max normalization to `[0, 255]`.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};

use crate::backend::{ActivationStack, ClassifierWeights};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassSource {
    GroundTruth,
    Predicted,
}

impl std::fmt::Display for ClassSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassSource::GroundTruth => "ground-truth",
            ClassSource::Predicted => "predicted",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisMap {
    pub raw: Array2<f64>,
    pub normalized: Array2<f64>,
    pub class_used: usize,
    pub class_source: ClassSource,
}

impl DisMap {
    pub fn new(
        acts: &ActivationStack,
        weights: &ClassifierWeights,
        class: usize,
        source: ClassSource,
    ) -> Result<Self> {
        let raw = compute_dismap(acts, weights, class)?;
        let normalized = normalize_map(&raw);
        Ok(Self {
            raw,
            normalized,
            class_used: class,
            class_source: source,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.raw.nrows()
    }
}

fn check(acts: &ActivationStack, w: &ClassifierWeights, class: usize) -> Result<()> {
    if class >= w.num_classes() {
        return Err(Error::ClassOutOfRange {
            index: class,
            count: w.num_classes(),
        });
    }
    if w.num_filters() != acts.num_filters() {
        return Err(Error::ShapeMismatch(format!(
            "classifier has {} filter weights but activation stack has {} maps",
            w.num_filters(),
            acts.num_filters()
        )));
    }
    Ok(())
}

/// `D_c(x, y) = sum_f w[c][f] * m_f(x, y)`, indexed `[y, x]`.
pub fn compute_dismap(acts: &ActivationStack, w: &ClassifierWeights, class: usize) -> Result<Array2<f64>> {
    check(acts, w, class)?;
    let l = acts.grid_size();
    let row = w.weights().row(class);
    let mut grid = Array2::<f64>::zeros((l, l));
    for (wf, map) in row.iter().zip(acts.maps().axis_iter(Axis(0))) {
        grid.scaled_add(*wf, &map);
    }
    Ok(grid)
}

/// Bias-free GAP logit for `class`: the mean of the class's discriminative map.
pub fn gap_score(acts: &ActivationStack, w: &ClassifierWeights, class: usize) -> Result<f64> {
    let grid = compute_dismap(acts, w, class)?;
    let l = grid.nrows() as f64;
    Ok(grid.sum() / (l * l))
}

/// Affine min-max scaling to `[0, 255]`. A constant grid maps to all zeros.
pub fn normalize_map(grid: &Array2<f64>) -> Array2<f64> {
    let (min, max) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if grid.is_empty() || !(max > min) {
        return Array2::zeros(grid.raw_dim());
    }
    let range = max - min;
    grid.mapv(|v| ((v - min) / range * 255.0).clamp(0.0, 255.0))
}

/// Class whose map drives region selection: the ground truth when it is one
/// of the DisNet's classes, otherwise the DisNet prediction.
pub fn select_dismap_class(
    ground_truth: Option<&str>,
    disnet_labels: &[String],
    predicted: usize,
) -> (usize, ClassSource) {
    ground_truth
        .and_then(|gt| disnet_labels.iter().position(|l| l == gt))
        .map(|i| (i, ClassSource::GroundTruth))
        .unwrap_or((predicted, ClassSource::Predicted))
}

/// Row-major CSV rendering with six decimals.
pub fn grid_to_csv(grid: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in grid.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}
