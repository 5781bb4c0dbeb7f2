//! ONNX backend against the toy backend on the same weights.
//!
//! Models are assembled in memory from protobuf messages, so no binary
//! fixtures are needed.

use std::path::Path;

use adired::backend::{
    load_model, BackendKind, ClassifierWeights, ConvBank, DisNet, FeatureExtractor, OnnxDisNet, OnnxExtractor,
    ToyDisNet, ToyExtractor,
};
use adired::Error;
use image::{Rgb, RgbImage};
use ndarray::{Array2, Array4};
use prost::Message;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tract_onnx::pb;

const RES: usize = 16;
const FILTERS: usize = 4;
const CLASSES: usize = 3;

fn float_tensor(name: &str, dims: &[usize], values: &[f32]) -> pb::TensorProto {
    pb::TensorProto {
        name: name.into(),
        dims: dims.iter().map(|&d| d as i64).collect(),
        data_type: 1,
        float_data: values.to_vec(),
        ..Default::default()
    }
}

fn value_info(name: &str, dims: &[usize]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension::Value, Dimension};
    pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: 1,
                shape: Some(pb::TensorShapeProto {
                    dim: dims
                        .iter()
                        .map(|&d| Dimension {
                            value: Some(Value::DimValue(d as i64)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn ints(name: &str, v: &[i64]) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: 7,
        ints: v.to_vec(),
        ..Default::default()
    }
}

fn int(name: &str, v: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: 2,
        i: v,
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.into(),
        name: output.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute,
        ..Default::default()
    }
}

struct Weights {
    conv: Vec<f32>,
    bias: Vec<f32>,
    fc: Vec<f32>,
}

fn random_weights(seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
    Weights {
        conv: draw(FILTERS * 3 * 9),
        bias: draw(FILTERS),
        fc: draw(CLASSES * FILTERS),
    }
}

/// Conv(3x3, pad 1) -> Relu -> GlobalAveragePool [-> Flatten -> Gemm].
fn build_model(w: &Weights, classifier: bool) -> Vec<u8> {
    let mut nodes = vec![
        node(
            "Conv",
            &["x", "conv_w", "conv_b"],
            "conv",
            vec![ints("kernel_shape", &[3, 3]), ints("pads", &[1, 1, 1, 1])],
        ),
        node("Relu", &["conv"], "act", vec![]),
        node("GlobalAveragePool", &["act"], "pooled", vec![]),
    ];
    let mut init = vec![
        float_tensor("conv_w", &[FILTERS, 3, 3, 3], &w.conv),
        float_tensor("conv_b", &[FILTERS], &w.bias),
    ];
    let output = if classifier {
        nodes.push(node("Flatten", &["pooled"], "flat", vec![int("axis", 1)]));
        nodes.push(node("Gemm", &["flat", "fc_w"], "logits", vec![int("transB", 1)]));
        init.push(float_tensor("fc_w", &[CLASSES, FILTERS], &w.fc));
        value_info("logits", &[1, CLASSES])
    } else {
        value_info("pooled", &[1, FILTERS, 1, 1])
    };
    let meta = |k: &str, v: &str| pb::StringStringEntryProto {
        key: k.into(),
        value: v.into(),
    };
    let model = pb::ModelProto {
        ir_version: 7,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "adired-tests".into(),
        graph: Some(pb::GraphProto {
            name: "g".into(),
            node: nodes,
            initializer: init,
            input: vec![value_info("x", &[1, 3, RES, RES])],
            output: vec![output],
            ..Default::default()
        }),
        metadata_props: vec![
            meta("adired.mean", "0,0,0"),
            meta("adired.std", "1,1,1"),
            meta("adired.labels", "a,b,c"),
        ],
        ..Default::default()
    };
    model.encode_to_vec()
}

fn toy_conv(w: &Weights) -> ConvBank {
    let weight = Array4::from_shape_vec((FILTERS, 3, 3, 3), w.conv.iter().map(|&v| f64::from(v)).collect()).unwrap();
    ConvBank::new(weight, Some(w.bias.iter().map(|&v| f64::from(v)).collect())).unwrap()
}

fn random_image(seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(RES as u32, RES as u32, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn disnet_matches_toy_backend() {
    let dir = tempfile::tempdir().unwrap();
    let w = random_weights(1);
    let path = write(dir.path(), "disnet.onnx", &build_model(&w, true));
    let onnx = OnnxDisNet::load(&path).unwrap();
    assert_eq!(onnx.descriptor().output_dim, RES);
    assert_eq!(onnx.descriptor().input_resolution, (RES as u32, RES as u32));
    assert_eq!(onnx.classifier().labels(), ["a", "b", "c"]);

    let fc = Array2::from_shape_vec((CLASSES, FILTERS), w.fc.iter().map(|&v| f64::from(v)).collect()).unwrap();
    assert_eq!(onnx.classifier().weights(), &fc);
    let labels = vec!["a".to_string(), "b".into(), "c".into()];
    let toy = ToyDisNet::new(
        "toy",
        toy_conv(&w),
        ClassifierWeights::new(fc, labels).unwrap(),
        (RES as u32, RES as u32),
        RES,
    )
    .unwrap();

    for seed in 0..5 {
        let img = random_image(seed);
        let a = onnx.forward(&img).unwrap();
        let b = toy.forward(&img).unwrap();
        let diff = a
            .activations
            .maps()
            .iter()
            .zip(b.activations.maps().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "activation difference {diff}");
        for (x, y) in a.class_scores.iter().zip(&b.class_scores) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}

#[test]
fn extractor_matches_toy_backend() {
    let dir = tempfile::tempdir().unwrap();
    let w = random_weights(2);
    let path = write(dir.path(), "ext.onnx", &build_model(&w, false));
    let model = load_model(&path, BackendKind::FeatureExtractor).unwrap();
    let onnx = model.into_extractor().unwrap();
    assert_eq!(onnx.dim(), FILTERS);
    let toy = ToyExtractor::new("toy", toy_conv(&w), vec![[0.0, 0.0, 1.0, 1.0]], (RES as u32, RES as u32)).unwrap();
    // a larger region exercises the resize path in both backends
    let img = RgbImage::from_fn(40, 24, |x, y| Rgb([(x * 6) as u8, (y * 10) as u8, ((x + y) * 3) as u8]));
    let a = onnx.extract(&img).unwrap();
    let b = toy.extract(&img).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-4, "{x} vs {y}");
    }
}

#[test]
fn truncated_model_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = build_model(&random_weights(3), true);
    let path = write(dir.path(), "cut.onnx", &bytes[..bytes.len() / 2]);
    assert!(matches!(OnnxDisNet::load(&path), Err(Error::Parse { .. })));
}

#[test]
fn model_without_classifier_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "headless.onnx", &build_model(&random_weights(4), false));
    assert!(matches!(OnnxDisNet::load(&path), Err(Error::MissingClassifierWeights { .. })));
    // the same file is a valid extractor
    assert!(OnnxExtractor::load(&path).is_ok());
}

#[test]
fn sidecar_labels_are_used_without_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = pb::ModelProto::decode(build_model(&random_weights(5), true).as_slice()).unwrap();
    model.metadata_props.retain(|kv| kv.key != "adired.labels");
    let path = write(dir.path(), "side.onnx", &model.encode_to_vec());
    assert_eq!(OnnxDisNet::load(&path).unwrap().classifier().labels(), ["class_0", "class_1", "class_2"]);
    std::fs::write(dir.path().join("side.onnx.labels"), "x\ny\nz\n").unwrap();
    assert_eq!(OnnxDisNet::load(&path).unwrap().classifier().labels(), ["x", "y", "z"]);
    std::fs::write(dir.path().join("side.onnx.labels"), "x\ny\n").unwrap();
    assert!(matches!(OnnxDisNet::load(&path), Err(Error::ShapeMismatch(_))));
}
