//! ONNX models executed with tract.
//!
//! DisNet contract: the graph contains a `GlobalAveragePool` (or a
//! `ReduceMean` over axes 2 and 3) whose input is the last convolutional
//! activation `[1, N, l, l]`, followed by a `Gemm`/`MatMul` classifier whose
//! weight is a graph initializer. The network is truncated at the pooling
//! input; class scores are recomputed from the activations and the weight
//! matrix with zero bias.
//!
//! Extractor contract: the first graph output is the globally pooled feature
//! layer, shaped `[1, D]` or `[1, D, 1, 1]`.
//!
//! Optional model metadata (`metadata_props`):
//! `adired.labels` (comma separated), `adired.mean` / `adired.std`
//! (three comma-separated floats), `adired.classifier_weight` (initializer
//! name). Labels may also come from a sidecar `<model>.labels` file with one
//! label per line.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use ndarray::{Array2, Array3};
use tract_onnx::pb;
use tract_onnx::prelude::*;

use super::{
    argmax_lowest, gap_class_scores, resize_bilinear, ActivationStack, BackendDescriptor,
    BackendKind, ClassifierWeights, DisNet, DisNetOutput, FeatureExtractor, FeatureVector,
    ModelSource,
};
use crate::error::{Error, Result};

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];
const DEFAULT_RESOLUTION: u32 = 224;
const ONNX_FLOAT: i32 = 1;

type Plan = Arc<TypedRunnableModel>;

fn tract_err(e: impl std::fmt::Display) -> Error {
    Error::Onnx(format!("{e:#}"))
}

struct Parsed {
    proto: pb::ModelProto,
    metadata: HashMap<String, String>,
    resolution: (u32, u32),
    mean: [f32; 3],
    std: [f32; 3],
}

fn unsupported(path: &Path, message: impl Into<String>) -> Error {
    Error::UnsupportedModel {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_triplet(path: &Path, key: &str, value: &str) -> Result<[f32; 3]> {
    let parts: Vec<f32> = value
        .split(',')
        .map(|s| s.trim().parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| unsupported(path, format!("metadata {key} is not three floats")))?;
    <[f32; 3]>::try_from(parts).map_err(|_| unsupported(path, format!("metadata {key} needs 3 values")))
}

fn read_proto(path: &Path) -> Result<Parsed> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let proto = tract_onnx::onnx()
        .proto_model_for_read(&mut bytes.as_slice())
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("not a valid ONNX protobuf: {e}"),
        })?;
    let graph = proto
        .graph
        .as_ref()
        .ok_or_else(|| unsupported(path, "model has no graph"))?;
    let metadata: HashMap<String, String> = proto
        .metadata_props
        .iter()
        .map(|kv| (kv.key.clone(), kv.value.clone()))
        .collect();

    let initializers: Vec<&str> = graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let input = graph
        .input
        .iter()
        .find(|i| !initializers.contains(&i.name.as_str()))
        .ok_or_else(|| unsupported(path, "model has no data input"))?;
    let dims = input_dims(input);
    let resolution = match dims.as_slice() {
        [_, Some(3), Some(h), Some(w)] if *h > 0 && *w > 0 => (*w as u32, *h as u32),
        [_, Some(c), ..] if *c != 3 => {
            return Err(unsupported(path, format!("input has {c} channels, expected 3")))
        }
        _ => (DEFAULT_RESOLUTION, DEFAULT_RESOLUTION),
    };
    let mean = match metadata.get("adired.mean") {
        Some(v) => parse_triplet(path, "adired.mean", v)?,
        None => IMAGENET_MEAN,
    };
    let std = match metadata.get("adired.std") {
        Some(v) => parse_triplet(path, "adired.std", v)?,
        None => IMAGENET_STD,
    };
    Ok(Parsed {
        proto,
        metadata,
        resolution,
        mean,
        std,
    })
}

fn input_dims(input: &pb::ValueInfoProto) -> Vec<Option<i64>> {
    use pb::tensor_shape_proto::dimension::Value;
    use pb::type_proto::Value as TypeValue;
    let Some(TypeValue::TensorType(t)) = input.r#type.as_ref().and_then(|t| t.value.as_ref()) else {
        return Vec::new();
    };
    t.shape
        .as_ref()
        .map(|s| {
            s.dim
                .iter()
                .map(|d| match d.value {
                    Some(Value::DimValue(v)) => Some(v),
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

fn build_plan(parsed: &Parsed, output: Option<&str>, path: &Path) -> Result<Plan> {
    let (w, h) = parsed.resolution;
    let mut model = tract_onnx::onnx()
        .model_for_proto_model(&parsed.proto)
        .map_err(|e| unsupported(path, format!("{e:#}")))?;
    model
        .set_input_fact(0, f32::fact([1, 3, h as usize, w as usize]).into())
        .map_err(tract_err)?;
    if let Some(name) = output {
        model
            .select_outputs_by_name([name])
            .map_err(|e| unsupported(path, format!("{e:#}")))?;
    }
    model
        .into_optimized()
        .and_then(|m| m.into_runnable())
        .map_err(|e| unsupported(path, format!("{e:#}")))
}

fn input_tensor(image: &RgbImage, parsed_res: (u32, u32), mean: &[f32; 3], std: &[f32; 3]) -> Result<Tensor> {
    let (w, h) = parsed_res;
    let resized = resize_bilinear(image, w, h)?;
    let arr = tract_ndarray::Array4::from_shape_fn((1, 3, h as usize, w as usize), |(_, c, y, x)| {
        (f32::from(resized.get_pixel(x as u32, y as u32)[c]) / 255.0 - mean[c]) / std[c]
    });
    Ok(arr.into_tensor())
}

fn run_single(plan: &Plan, input: Tensor) -> Result<(Vec<usize>, Vec<f32>)> {
    let out = plan.run(tvec!(input.into())).map_err(tract_err)?;
    let first = out
        .first()
        .ok_or_else(|| Error::Onnx("model produced no outputs".into()))?;
    let view = first.to_plain_array_view::<f32>().map_err(tract_err)?;
    Ok((view.shape().to_vec(), view.iter().copied().collect()))
}

fn initializer_f32(t: &pb::TensorProto) -> Option<Vec<f32>> {
    if t.data_type != ONNX_FLOAT {
        return None;
    }
    if !t.float_data.is_empty() {
        return Some(t.float_data.clone());
    }
    if t.raw_data.len() % 4 != 0 {
        return None;
    }
    Some(
        t.raw_data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    )
}

/// Find the activation tensor feeding global average pooling.
fn find_pooled_activation(graph: &pb::GraphProto) -> Option<String> {
    graph.node.iter().rev().find_map(|n| match n.op_type.as_str() {
        "GlobalAveragePool" => n.input.first().cloned(),
        "ReduceMean" => {
            let axes = n
                .attribute
                .iter()
                .find(|a| a.name == "axes")
                .map(|a| a.ints.clone())
                .unwrap_or_default();
            let mut sorted = axes.clone();
            sorted.sort_unstable();
            (sorted == [2, 3] || sorted == [-2, -1]).then(|| n.input.first().cloned()).flatten()
        }
        _ => None,
    })
}

/// Classifier weight as a `[classes, filters]` matrix.
fn find_classifier(parsed: &Parsed, path: &Path) -> Result<Array2<f64>> {
    let graph = parsed.proto.graph.as_ref().expect("checked in read_proto");
    let inits: HashMap<&str, &pb::TensorProto> =
        graph.initializer.iter().map(|t| (t.name.as_str(), t)).collect();
    let missing = |message: String| Error::MissingClassifierWeights {
        path: path.to_path_buf(),
        message,
    };

    let to_matrix = |t: &pb::TensorProto, transposed: bool| -> Result<Array2<f64>> {
        let values = initializer_f32(t)
            .ok_or_else(|| missing(format!("initializer `{}` is not inline float data", t.name)))?;
        let [a, b] = t.dims[..] else {
            return Err(missing(format!("initializer `{}` is not a matrix", t.name)));
        };
        let m = Array2::from_shape_vec((a as usize, b as usize), values)
            .map_err(|e| missing(e.to_string()))?
            .mapv(f64::from);
        Ok(if transposed { m.reversed_axes().as_standard_layout().to_owned() } else { m })
    };

    if let Some(name) = parsed.metadata.get("adired.classifier_weight") {
        let t = inits
            .get(name.as_str())
            .ok_or_else(|| missing(format!("metadata names `{name}` but no such initializer")))?;
        return to_matrix(t, false);
    }

    for node in graph.node.iter().rev() {
        let transposed = match node.op_type.as_str() {
            "Gemm" => {
                let trans_b = node
                    .attribute
                    .iter()
                    .find(|a| a.name == "transB")
                    .map(|a| a.i)
                    .unwrap_or(0);
                trans_b == 0
            }
            "MatMul" => true,
            _ => continue,
        };
        if let Some(t) = node.input.get(1).and_then(|n| inits.get(n.as_str())) {
            return to_matrix(t, transposed);
        }
    }
    Err(missing("no Gemm/MatMul layer with an initializer weight".into()))
}

fn resolve_labels(parsed: &Parsed, path: &Path, count: usize) -> Result<Vec<String>> {
    let from_meta = parsed
        .metadata
        .get("adired.labels")
        .map(|s| s.split(',').map(|l| l.trim().to_string()).collect::<Vec<_>>());
    let sidecar = PathBuf::from(format!("{}.labels", path.display()));
    let labels = match from_meta {
        Some(l) => l,
        None if sidecar.exists() => std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::io(&sidecar, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => (0..count).map(|c| format!("class_{c}")).collect(),
    };
    if labels.len() != count {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {count} classifier rows",
            labels.len()
        )));
    }
    Ok(labels)
}

fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "onnx".into())
}

pub struct OnnxDisNet {
    descriptor: BackendDescriptor,
    classifier: ClassifierWeights,
    plan: Plan,
    mean: [f32; 3],
    std: [f32; 3],
}

impl OnnxDisNet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let parsed = read_proto(path)?;
        let graph = parsed.proto.graph.as_ref().expect("checked in read_proto");
        let weights = find_classifier(&parsed, path)?;
        let activation = find_pooled_activation(graph)
            .ok_or_else(|| unsupported(path, "no GlobalAveragePool feeding the classifier"))?;
        let labels = resolve_labels(&parsed, path, weights.nrows())?;
        let classifier = ClassifierWeights::new(weights, labels)?;
        let plan = build_plan(&parsed, Some(&activation), path)?;

        let probe = input_tensor(
            &RgbImage::new(parsed.resolution.0, parsed.resolution.1),
            parsed.resolution,
            &parsed.mean,
            &parsed.std,
        )?;
        let (shape, _) = run_single(&plan, probe)?;
        let grid = match shape[..] {
            [1, n, l, l2] if l == l2 && n == classifier.num_filters() => l,
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "activation `{activation}` has shape {shape:?}, expected [1, {}, l, l]",
                    classifier.num_filters()
                )))
            }
        };
        let descriptor = BackendDescriptor {
            id: model_id(path),
            kind: BackendKind::DisNet,
            input_resolution: parsed.resolution,
            source: ModelSource::ModelFile(path.to_path_buf()),
            class_labels: classifier.labels().to_vec(),
            output_dim: grid,
        };
        Ok(Self {
            descriptor,
            classifier,
            plan,
            mean: parsed.mean,
            std: parsed.std,
        })
    }
}

impl DisNet for OnnxDisNet {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn classifier(&self) -> &ClassifierWeights {
        &self.classifier
    }

    fn forward(&self, image: &RgbImage) -> Result<DisNetOutput> {
        let input = input_tensor(image, self.descriptor.input_resolution, &self.mean, &self.std)?;
        let (shape, values) = run_single(&self.plan, input)?;
        let [1, n, l, l2] = shape[..] else {
            return Err(Error::ShapeMismatch(format!("activation shape {shape:?}")));
        };
        if l != l2 {
            return Err(Error::ShapeMismatch(format!("activation shape {shape:?}")));
        }
        let maps = Array3::from_shape_vec((n, l, l), values.into_iter().map(f64::from).collect())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let activations = ActivationStack::new(maps)?;
        let class_scores = gap_class_scores(&activations, &self.classifier)?;
        Ok(DisNetOutput {
            predicted_class: argmax_lowest(&class_scores),
            class_scores,
            activations,
        })
    }
}

pub struct OnnxExtractor {
    descriptor: BackendDescriptor,
    plan: Plan,
    mean: [f32; 3],
    std: [f32; 3],
}

impl OnnxExtractor {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let parsed = read_proto(path)?;
        let output = parsed.metadata.get("adired.feature_output").cloned();
        let plan = build_plan(&parsed, output.as_deref(), path)?;
        let probe = input_tensor(
            &RgbImage::new(parsed.resolution.0, parsed.resolution.1),
            parsed.resolution,
            &parsed.mean,
            &parsed.std,
        )?;
        let (shape, values) = run_single(&plan, probe)?;
        let dim = match shape[..] {
            [1, d] | [1, d, 1, 1] => d,
            _ => {
                return Err(unsupported(
                    path,
                    format!("feature output has shape {shape:?}, expected [1, D] or [1, D, 1, 1]"),
                ))
            }
        };
        debug_assert_eq!(values.len(), dim);
        let descriptor = BackendDescriptor {
            id: model_id(path),
            kind: BackendKind::FeatureExtractor,
            input_resolution: parsed.resolution,
            source: ModelSource::ModelFile(path.to_path_buf()),
            class_labels: Vec::new(),
            output_dim: dim,
        };
        Ok(Self {
            descriptor,
            plan,
            mean: parsed.mean,
            std: parsed.std,
        })
    }
}

impl FeatureExtractor for OnnxExtractor {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn extract(&self, region: &RgbImage) -> Result<FeatureVector> {
        let input = input_tensor(region, self.descriptor.input_resolution, &self.mean, &self.std)?;
        let (_, values) = run_single(&self.plan, input)?;
        if values.len() != self.descriptor.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.descriptor.output_dim,
                actual: values.len(),
            });
        }
        Ok(FeatureVector::new(values, self.descriptor.id.clone()))
    }
}
