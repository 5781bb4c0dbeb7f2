//! Network backends consumed by the pipeline.
//!
//! Two roles exist: a *DisNet*, a GAP classifier whose last convolutional
//! activations and linear-layer weights produce discriminative maps, and
//! *feature extractors*, which turn an image region into a pooled feature
//! vector. Each role has a toy implementation (pure arithmetic, weights read
//! from an `ADIRTOY v1` text fixture) and an ONNX implementation.
//!
//! Backends are immutable once loaded and every forward call takes `&self`,
//! so a single instance can be shared across worker threads.

mod imageops;
mod onnx;
mod toy;
pub mod toyfile;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use ndarray::{Array2, Array3};

pub use self::imageops::{crop, resize_bilinear, to_planar};
pub use self::onnx::{OnnxDisNet, OnnxExtractor};
pub use self::toy::{Bin, ConvBank, ToyDisNet, ToyExtractor};

use crate::error::{Error, Result};

/// The `N` activation maps of a DisNet's last convolutional layer, stored as
/// an `N x l x l` array indexed `[filter, y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStack {
    maps: Array3<f64>,
}

impl ActivationStack {
    pub fn new(maps: Array3<f64>) -> Result<Self> {
        let (n, rows, cols) = maps.dim();
        if n == 0 {
            return Err(Error::ShapeMismatch("activation stack has no filters".into()));
        }
        if rows != cols || rows == 0 {
            return Err(Error::ShapeMismatch(format!(
                "activation maps must be square and non-empty, got {rows}x{cols}"
            )));
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &Array3<f64> {
        &self.maps
    }

    /// Side `l` of each map.
    pub fn grid_size(&self) -> usize {
        self.maps.dim().1
    }

    pub fn num_filters(&self) -> usize {
        self.maps.dim().0
    }
}

/// GAP-classifier weights `w[c][f]`, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierWeights {
    weights: Array2<f64>,
    labels: Vec<String>,
}

impl ClassifierWeights {
    pub fn new(weights: Array2<f64>, labels: Vec<String>) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::ShapeMismatch("classifier weights are empty".into()));
        }
        if weights.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight rows but {} class labels",
                weights.nrows(),
                labels.len()
            )));
        }
        Ok(Self { weights, labels })
    }

    /// Weights with generated labels `class_0 .. class_{C-1}`.
    pub fn unlabeled(weights: Array2<f64>) -> Result<Self> {
        let labels = (0..weights.nrows()).map(|c| format!("class_{c}")).collect();
        Self::new(weights, labels)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_filters(&self) -> usize {
        self.weights.ncols()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Output of an extractor for one region.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub extractor_id: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>, extractor_id: impl Into<String>) -> Self {
        Self {
            values,
            extractor_id: extractor_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackendKind {
    DisNet,
    FeatureExtractor,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::DisNet => "disnet",
            BackendKind::FeatureExtractor => "feature-extractor",
        })
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disnet" => Ok(BackendKind::DisNet),
            "feature-extractor" | "extractor" => Ok(BackendKind::FeatureExtractor),
            other => Err(Error::Config(format!("unknown backend kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSource {
    /// Hand-specified arithmetic network, optionally read from a fixture file.
    Toy(Option<PathBuf>),
    ModelFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendDescriptor {
    /// Stable identifier, used as `FeatureVector::extractor_id`.
    pub id: String,
    pub kind: BackendKind,
    /// Expected network input as `(width, height)`.
    pub input_resolution: (u32, u32),
    pub source: ModelSource,
    /// Class labels, non-empty for DisNets.
    pub class_labels: Vec<String>,
    /// Feature dimension for extractors, `l` for DisNets.
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisNetOutput {
    pub activations: ActivationStack,
    pub predicted_class: usize,
    pub class_scores: Vec<f64>,
}

pub trait DisNet: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn classifier(&self) -> &ClassifierWeights;

    fn forward(&self, image: &RgbImage) -> Result<DisNetOutput>;
}

pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn dim(&self) -> usize {
        self.descriptor().output_dim
    }

    /// Resize `region` to the extractor's input resolution and forward it.
    fn extract(&self, region: &RgbImage) -> Result<FeatureVector>;
}

/// A loaded network in one of its two roles.
#[derive(Clone)]
pub enum Model {
    DisNet(Arc<dyn DisNet>),
    Extractor(Arc<dyn FeatureExtractor>),
}

impl Model {
    pub fn descriptor(&self) -> &BackendDescriptor {
        match self {
            Model::DisNet(m) => m.descriptor(),
            Model::Extractor(m) => m.descriptor(),
        }
    }

    pub fn into_disnet(self) -> Result<Arc<dyn DisNet>> {
        match self {
            Model::DisNet(m) => Ok(m),
            Model::Extractor(m) => Err(Error::Config(format!(
                "model `{}` is a feature extractor, not a disnet",
                m.descriptor().id
            ))),
        }
    }

    pub fn into_extractor(self) -> Result<Arc<dyn FeatureExtractor>> {
        match self {
            Model::Extractor(m) => Ok(m),
            Model::DisNet(m) => Err(Error::Config(format!(
                "model `{}` is a disnet, not a feature extractor",
                m.descriptor().id
            ))),
        }
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Model").field(self.descriptor()).finish()
    }
}

/// Load a model file. Files ending in `.onnx` go through the ONNX runtime;
/// anything else must be an `ADIRTOY v1` fixture.
pub fn load_model(path: impl AsRef<Path>, kind: BackendKind) -> Result<Model> {
    let path = path.as_ref();
    let is_onnx = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("onnx"));
    Ok(match (is_onnx, kind) {
        (true, BackendKind::DisNet) => Model::DisNet(Arc::new(OnnxDisNet::load(path)?)),
        (true, BackendKind::FeatureExtractor) => {
            Model::Extractor(Arc::new(OnnxExtractor::load(path)?))
        }
        (false, BackendKind::DisNet) => Model::DisNet(Arc::new(ToyDisNet::load(path)?)),
        (false, BackendKind::FeatureExtractor) => {
            Model::Extractor(Arc::new(ToyExtractor::load(path)?))
        }
    })
}

/// Decode an image file into an RGB raster.
pub fn open_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// GAP class scores with zero bias: `s_c = (1/l^2) sum_{x,y} sum_f w[c][f] m_f(x,y)`,
/// computed by pooling each map first.
pub(crate) fn gap_class_scores(acts: &ActivationStack, w: &ClassifierWeights) -> Result<Vec<f64>> {
    if w.num_filters() != acts.num_filters() {
        return Err(Error::ShapeMismatch(format!(
            "classifier has {} filter weights but activation stack has {} maps",
            w.num_filters(),
            acts.num_filters()
        )));
    }
    let pooled: Vec<f64> = acts
        .maps()
        .outer_iter()
        .map(|m| m.mean().unwrap_or(0.0))
        .collect();
    Ok(w
        .weights()
        .outer_iter()
        .map(|row| row.iter().zip(&pooled).map(|(a, b)| a * b).sum())
        .collect())
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
