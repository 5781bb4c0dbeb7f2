//! Deterministic synthetic scene dataset and matching toy models.
//!
//! Each image is mid-gray with Gaussian noise plus a class-dependent number
//! of small motifs. A motif is a single-pixel checkerboard of two
//! complementary colours, so every 2x2 block averages to the background.
//! Antialiased downsampling averages a motif away, which leaves it visible
//! only to full-resolution views of small regions.
//!
//! The toy networks apply a Laplacian to four signed channel combinations,
//! one per colour pair's contrast direction; a motif drives its own class's
//! filter three times harder than the others.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backend::{Bin, ClassifierWeights, ConvBank, ToyDisNet, ToyExtractor};
use crate::error::{Error, Result};
use crate::pipeline::{ModelPaths, PipelineConfig, RunConfig};
use crate::regions::SelectionConfig;
use crate::svm::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotifClass {
    pub label: &'static str,
    pub colors: ([u8; 3], [u8; 3]),
    pub motifs: usize,
}

pub const CLASSES: [MotifClass; 4] = [
    MotifClass {
        label: "black_white",
        colors: ([0, 0, 0], [255, 255, 255]),
        motifs: 1,
    },
    MotifClass {
        label: "red_cyan",
        colors: ([255, 0, 0], [0, 255, 255]),
        motifs: 2,
    },
    MotifClass {
        label: "green_magenta",
        colors: ([0, 255, 0], [255, 0, 255]),
        motifs: 3,
    },
    MotifClass {
        label: "blue_yellow",
        colors: ([0, 0, 255], [255, 255, 0]),
        motifs: 5,
    },
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: u32,
    pub motif_size: u32,
    /// Minimum Chebyshev distance between motif corners, in pixels.
    pub motif_spacing: u32,
    /// Background noise standard deviation in 8-bit units.
    pub noise_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 112,
            motif_size: 12,
            motif_spacing: 28,
            noise_sigma: 10.0,
            train_per_class: 50,
            test_per_class: 50,
            seed: 2024,
        }
    }
}

/// Top-left corners of `count` motifs, pairwise at least `spacing` apart.
fn place_motifs(spec: &SyntheticSpec, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(u32, u32)>> {
    const MARGIN: u32 = 4;
    let hi = spec.image_size - spec.motif_size - MARGIN;
    if hi < MARGIN {
        return Err(Error::Config("motif does not fit the image".into()));
    }
    for _ in 0..1000 {
        let mut placed: Vec<(u32, u32)> = Vec::with_capacity(count);
        for _ in 0..200 {
            if placed.len() == count {
                break;
            }
            let p = (rng.random_range(MARGIN..=hi), rng.random_range(MARGIN..=hi));
            if placed
                .iter()
                .all(|q| p.0.abs_diff(q.0).max(p.1.abs_diff(q.1)) >= spec.motif_spacing)
            {
                placed.push(p);
            }
        }
        if placed.len() == count {
            return Ok(placed);
        }
    }
    Err(Error::Config(format!("cannot place {count} motifs")))
}

/// One image of `class` and the top-left corners of its motifs.
pub fn render_image(spec: &SyntheticSpec, class: &MotifClass, rng: &mut ChaCha8Rng) -> Result<(RgbImage, Vec<(u32, u32)>)> {
    let n = spec.image_size;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut img = RgbImage::from_fn(n, n, |_, _| {
        Rgb([0; 3].map(|_: u8| (128.0 + noise.sample(rng)).round().clamp(0.0, 255.0) as u8))
    });
    let corners = place_motifs(spec, class.motifs, rng)?;
    for &(x0, y0) in &corners {
        let parity = u32::from(rng.random_bool(0.5));
        for dy in 0..spec.motif_size {
            for dx in 0..spec.motif_size {
                let c = if (dx + dy + parity) % 2 == 0 { class.colors.0 } else { class.colors.1 };
                img.put_pixel(x0 + dx, y0 + dy, Rgb(c));
            }
        }
    }
    Ok((img, corners))
}

/// Write images under `dir/images/<label>/` and `dir/manifest.csv`.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = String::from("relative_path,label,split\n");
    for class in &CLASSES {
        let class_dir = dir.join("images").join(class.label);
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let splits = [("train", spec.train_per_class), ("test", spec.test_per_class)];
        for (split, count) in splits {
            for i in 0..count {
                let (img, _) = render_image(spec, class, &mut rng)?;
                let rel = format!("images/{}/{split}_{i:03}.png", class.label);
                let path = dir.join(&rel);
                img.save(&path).map_err(|e| Error::ImageDecode {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let _ = writeln!(manifest, "{rel},{},{split}", class.label);
            }
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Per-class channel weights: the sign pattern of `colors.0 - colors.1`.
fn contrast_direction(class: &MotifClass) -> [f64; 3] {
    let (a, b) = class.colors;
    [0, 1, 2].map(|c| (f64::from(a[c]) - f64::from(b[c])).signum())
}

/// One Laplacian filter per class, applied to that class's contrast direction.
pub fn contrast_filters() -> ConvBank {
    const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
    let mut w = Array4::zeros((CLASSES.len(), 3, 3, 3));
    for (f, class) in CLASSES.iter().enumerate() {
        for (c, sign) in contrast_direction(class).into_iter().enumerate() {
            for (y, row) in LAPLACIAN.iter().enumerate() {
                for (x, v) in row.iter().enumerate() {
                    w[[f, c, y, x]] = sign * v;
                }
            }
        }
    }
    ConvBank::new(w, None).expect("valid filter bank")
}

pub const DISNET_RESOLUTION: u32 = 112;
pub const DISNET_GRID: usize = 14;
pub const EXTRACTOR_RESOLUTION: u32 = 28;

/// DisNet whose class maps all respond to every motif, each class weighting
/// its own filter more.
pub fn toy_disnet() -> ToyDisNet {
    let n = CLASSES.len();
    let w = Array2::from_shape_fn((n, n), |(k, f)| if k == f { 1.5 } else { 0.75 });
    let labels = CLASSES.iter().map(|c| c.label.to_string()).collect();
    let classifier = ClassifierWeights::new(w, labels).expect("valid classifier");
    ToyDisNet::new(
        "synthetic-disnet",
        contrast_filters(),
        classifier,
        (DISNET_RESOLUTION, DISNET_RESOLUTION),
        DISNET_GRID,
    )
    .expect("valid disnet")
}

/// Whole input plus its four quadrants.
pub fn quadrant_bins() -> Vec<Bin> {
    vec![
        [0.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, 0.5, 0.5],
        [0.5, 0.0, 1.0, 0.5],
        [0.0, 0.5, 0.5, 1.0],
        [0.5, 0.5, 1.0, 1.0],
    ]
}

pub fn toy_extractor(id: &str) -> ToyExtractor {
    ToyExtractor::new(
        id,
        contrast_filters(),
        quadrant_bins(),
        (EXTRACTOR_RESOLUTION, EXTRACTOR_RESOLUTION),
    )
    .expect("valid extractor")
}

/// Write the four toy model fixtures into `dir`.
pub fn write_toy_models(dir: &Path) -> Result<ModelPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ModelPaths {
        disnet: Some(dir.join("disnet.adirtoy")),
        global: dir.join("global.adirtoy"),
        coarse: dir.join("coarse.adirtoy"),
        fine: dir.join("fine.adirtoy"),
    };
    toy_disnet().to_toyfile().write(paths.disnet.as_ref().expect("set above"))?;
    for (id, path) in [("global", &paths.global), ("coarse", &paths.coarse), ("fine", &paths.fine)] {
        toy_extractor(id).to_toyfile().write(path)?;
    }
    Ok(paths)
}

/// Dataset, models and `experiment.toml` under `dir`. Returns the config path.
pub fn write_experiment(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    write_dataset(dir, spec)?;
    write_toy_models(&dir.join("models"))?;
    let config = PipelineConfig {
        run: RunConfig {
            cache_dir: Some("cache".into()),
            ..RunConfig::default()
        },
        models: ModelPaths {
            disnet: Some("models/disnet.adirtoy".into()),
            global: "models/global.adirtoy".into(),
            coarse: "models/coarse.adirtoy".into(),
            fine: "models/fine.adirtoy".into(),
        },
        selection: SelectionConfig::default(),
        train: TrainConfig::default(),
    };
    let path = dir.join("experiment.toml");
    std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motifs_are_separated_and_mean_gray() {
        let spec = SyntheticSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (img, corners) = render_image(&spec, &CLASSES[3], &mut rng).unwrap();
        assert_eq!(corners.len(), 5);
        for (i, a) in corners.iter().enumerate() {
            for b in &corners[i + 1..] {
                assert!(a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) >= spec.motif_spacing);
            }
        }
        let (x0, y0) = corners[0];
        let mut sum = [0u32; 3];
        for y in y0..y0 + spec.motif_size {
            for x in x0..x0 + spec.motif_size {
                for c in 0..3 {
                    sum[c] += u32::from(img.get_pixel(x, y)[c]);
                }
            }
        }
        let n = spec.motif_size * spec.motif_size;
        assert!(sum.iter().all(|s| (s / n).abs_diff(127) <= 1));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = render_image(&spec, &CLASSES[0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = render_image(&spec, &CLASSES[0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contrast_directions_are_distinct() {
        let dirs: Vec<[f64; 3]> = CLASSES.iter().map(contrast_direction).collect();
        for (i, a) in dirs.iter().enumerate() {
            for (j, b) in dirs.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert_eq!(d.abs(), if i == j { 3.0 } else { 1.0 });
            }
        }
        assert_eq!(contrast_filters().num_filters(), 4);
        use crate::backend::DisNet;
        assert_eq!(toy_disnet().classifier().weights()[[1, 1]], 1.5);
    }
}
