use std::fmt::Write as _;
use std::path::Path;

use crate::aggregate::{ImageRepresentation, PooledFeatures};
use crate::error::{Error, Result};
use crate::regions::RegionSet;
use crate::svm::{self, SvmModel};

use super::{DatasetManifest, Pipeline, SamplingMode, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub mode: SamplingMode,
    /// `(t_coarse, t_fine)` for adaptive runs.
    pub thresholds: Option<(f64, f64)>,
    /// Test accuracy in percent.
    pub accuracy: f64,
    /// Patch counts averaged over every image in the run.
    pub avg_patches: f64,
    pub avg_coarse: f64,
    pub avg_fine: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl ExperimentReport {
    pub const CSV_HEADER: &'static str =
        "mode,t_coarse,t_fine,accuracy,avg_patches_per_image,avg_coarse_per_image,avg_fine_per_image,n_train,n_test";

    pub fn csv_row(&self) -> String {
        let (tc, tf) = match self.thresholds {
            Some((c, f)) => (format!("{c}"), format!("{f}")),
            None => ("-".into(), "-".into()),
        };
        format!(
            "{},{tc},{tf},{:.4},{:.4},{:.4},{:.4},{},{}",
            self.mode, self.accuracy, self.avg_patches, self.avg_coarse, self.avg_fine, self.n_train, self.n_test
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub model: SvmModel,
    /// `(relative_path, truth, predicted)` for every test image.
    pub predictions: Vec<(String, String, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Pipeline {
    /// Normalized representation vectors for `entries`, in order.
    pub fn representations(&self, manifest: &DatasetManifest) -> Result<Vec<ImageRepresentation>> {
        let pooled = self.materialize(manifest)?;
        Ok(manifest
            .entries
            .iter()
            .zip(&pooled)
            .map(|(e, p)| ImageRepresentation::from_pooled(e.relative_path.clone(), p))
            .collect())
    }

    /// Train on the train split and score the test split.
    pub fn run_experiment(&self, manifest: &DatasetManifest) -> Result<ExperimentOutcome> {
        let manifest = self.prepare_manifest(manifest)?;
        let pooled = self.materialize(&manifest)?;
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        let mut test = Vec::new();
        for (e, p) in manifest.entries.iter().zip(&pooled) {
            let v = ImageRepresentation::from_pooled(e.relative_path.clone(), p).concatenated;
            match e.split {
                Split::Train => {
                    train_x.push(v);
                    train_y.push(e.label.clone());
                }
                Split::Test => test.push((e, v)),
            }
        }
        if train_x.is_empty() {
            return Err(Error::EmptyInput("no training images"));
        }
        if test.is_empty() {
            return Err(Error::EmptyInput("no test images"));
        }
        let model = svm::train(&train_x, &train_y, &self.config.train)?;
        let mut predictions = Vec::with_capacity(test.len());
        for (e, v) in &test {
            predictions.push((e.relative_path.clone(), e.label.clone(), model.predict_label(v)?.to_string()));
        }
        let predicted: Vec<&str> = predictions.iter().map(|p| p.2.as_str()).collect();
        let truth: Vec<&str> = predictions.iter().map(|p| p.1.as_str()).collect();
        let accuracy = svm::accuracy(&predicted, &truth)?;

        let report = ExperimentReport {
            mode: self.mode(),
            thresholds: (self.mode() == SamplingMode::Adired)
                .then_some((self.config.selection.t_coarse, self.config.selection.t_fine)),
            accuracy,
            avg_patches: mean(pooled.iter().map(|p| f64::from(p.patch_count()))),
            avg_coarse: mean(pooled.iter().map(|p| f64::from(p.n_coarse))),
            avg_fine: mean(pooled.iter().map(|p| f64::from(p.n_fine))),
            n_train: train_x.len(),
            n_test: test.len(),
        };
        log::info!(
            "{}: accuracy {:.2}% over {} test images, {:.2} patches per image",
            report.mode,
            report.accuracy,
            report.n_test,
            report.avg_patches
        );
        Ok(ExperimentOutcome {
            report,
            model,
            predictions,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepScale {
    Both,
    Coarse,
    Fine,
}

impl std::str::FromStr for SweepScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(SweepScale::Both),
            "coarse" => Ok(SweepScale::Coarse),
            "fine" => Ok(SweepScale::Fine),
            other => Err(Error::Config(format!("unknown sweep scale `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub report: ExperimentReport,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "t,accuracy,avg_regions_per_image,avg_coarse_per_image,avg_fine_per_image";

    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!("{},{:.4},{:.4},{:.4},{:.4}", self.t, r.accuracy, r.avg_patches, r.avg_coarse, r.avg_fine)
    }
}

/// Rerun the adaptive experiment once per threshold, setting the chosen
/// scale(s) to `t` and leaving the others at their configured values.
pub fn sweep_threshold(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    thresholds: &[f64],
    scale: SweepScale,
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("no thresholds to sweep"));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut cfg = pipeline.config.clone();
        cfg.run.mode = SamplingMode::Adired;
        if scale != SweepScale::Fine {
            cfg.selection.t_coarse = t;
        }
        if scale != SweepScale::Coarse {
            cfg.selection.t_fine = t;
        }
        let outcome = pipeline.with_config(cfg)?.run_experiment(manifest)?;
        rows.push(SweepRow {
            t,
            report: outcome.report,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRegionStats {
    pub label: String,
    pub images: usize,
    pub mean_regions: f64,
    pub mean_coarse: f64,
    pub mean_fine: f64,
}

impl ClassRegionStats {
    pub const CSV_HEADER: &'static str = "class,images,mean_regions_per_image,mean_coarse,mean_fine";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4}",
            self.label, self.images, self.mean_regions, self.mean_coarse, self.mean_fine
        )
    }
}

/// Mean patch counts per class label over every image, in label order.
pub fn per_class_region_stats(pipeline: &Pipeline, manifest: &DatasetManifest) -> Result<Vec<ClassRegionStats>> {
    let manifest = pipeline.prepare_manifest(manifest)?;
    let pooled = pipeline.materialize(&manifest)?;
    Ok(manifest
        .labels()
        .into_iter()
        .map(|label| {
            let rows: Vec<&PooledFeatures> = manifest
                .entries
                .iter()
                .zip(&pooled)
                .filter(|(e, _)| e.label == label)
                .map(|(_, p)| p)
                .collect();
            ClassRegionStats {
                images: rows.len(),
                mean_regions: mean(rows.iter().map(|p| f64::from(p.patch_count()))),
                mean_coarse: mean(rows.iter().map(|p| f64::from(p.n_coarse))),
                mean_fine: mean(rows.iter().map(|p| f64::from(p.n_fine))),
                label,
            }
        })
        .collect())
}

/// `image_id,scale,left,top,side,score` rows.
pub fn regions_csv<'a>(sets: impl IntoIterator<Item = &'a RegionSet>) -> String {
    let mut out = String::from("image_id,scale,left,top,side,score\n");
    for set in sets {
        for p in &set.patches {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4}",
                set.image_id, p.scale, p.left, p.top, p.side, p.score
            );
        }
    }
    out
}

fn file_stem_id(image_id: &str) -> String {
    let stem = Path::new(image_id).with_extension("");
    stem.to_string_lossy()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Write each selected patch of up to `limit` images as
/// `<image>_<scale>_<rank>_<score>.png` plus `patches.csv`. Returns the
/// number of patches written.
pub fn dump_patches(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    out_dir: &Path,
    limit: Option<usize>,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = pipeline.prepare_manifest(manifest)?;
    let mut sets = Vec::new();
    let mut written = 0;
    for entry in manifest.entries.iter().take(limit.unwrap_or(usize::MAX)) {
        let (image, regions) = pipeline.entry_regions(&manifest, entry)?;
        let Some(regions) = regions else {
            return Err(Error::Config("global mode selects no patches".into()));
        };
        let stem = file_stem_id(&entry.relative_path);
        for scale in crate::regions::LocalScale::ALL {
            for (rank, p) in regions.of_scale(scale).enumerate() {
                let crop = crate::backend::crop(&image, p.left, p.top, p.side, p.side)?;
                let path = out_dir.join(format!("{stem}_{scale}_{rank}_{:.0}.png", p.score));
                crop.save(&path).map_err(|e| Error::ImageDecode {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                written += 1;
            }
        }
        sets.push(regions);
    }
    let csv_path = out_dir.join("patches.csv");
    std::fs::write(&csv_path, regions_csv(&sets)).map_err(|e| Error::io(&csv_path, e))?;
    Ok(written)
}
