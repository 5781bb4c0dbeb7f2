use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use adired::backend::open_image;
use adired::dismap::grid_to_csv;
use adired::pipeline::{
    dump_patches, ingest_dataset, per_class_region_stats, regions_csv, sweep_threshold, ClassRegionStats,
    DatasetManifest, ExperimentReport, Pipeline, PipelineConfig, SamplingMode, Split, SweepRow, SweepScale,
};
use adired::svm::{self, SvmModel};
use adired::synthetic::{write_experiment, SyntheticSpec};

#[derive(Parser)]
#[command(name = "adired", version, about = "Adaptive discriminative region selection for scene recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Experiment {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest CSV (`relative_path,label,split`).
    #[arg(long)]
    manifest: PathBuf,
    /// Image root; defaults to the manifest's directory.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Worker threads (0 = one per core); overrides `run.workers`.
    #[arg(long)]
    workers: Option<usize>,
}

impl Experiment {
    fn load(&self) -> Result<(Pipeline, DatasetManifest)> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(w) = self.workers {
            config.run.workers = w;
        }
        let pipeline = Pipeline::load(config)?;
        let manifest = ingest_dataset(&self.manifest, self.root.as_deref())?;
        Ok((pipeline, manifest))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and print per-class image counts.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Write the normalized Dis-Map of one image as CSV.
    DismapDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth label; without it the DisNet prediction drives the map.
        #[arg(long)]
        label: Option<String>,
        /// Write the un-normalized map instead.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the patches chosen for one image, or for every image of a manifest.
    SelectRegions {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        image: Option<PathBuf>,
        #[arg(long, requires = "image")]
        label: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Save every selected patch as PNG plus a `patches.csv` index.
    DumpPatches {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        out: PathBuf,
        /// Only the first N images of the manifest.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compute and cache pooled features for every image.
    Features {
        #[command(flatten)]
        exp: Experiment,
    },
    /// Train the one-vs-rest SVM on the train split and save it.
    Train {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score the test split. Without `--model` the SVM is trained first.
    Evaluate {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report CSV destination; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-image `relative_path,truth,predicted` CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Rerun the experiment for each threshold.
    SweepThreshold {
        #[command(flatten)]
        exp: Experiment,
        /// Thresholds in [0, 255].
        #[arg(long = "t", value_delimiter = ',', num_args = 1.., required = true)]
        thresholds: Vec<f64>,
        /// Which scale's threshold to vary: both, coarse or fine.
        #[arg(long, default_value = "both")]
        scale: SweepScale,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean number of selected patches per class.
    ClassStats {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment with a non-adaptive patch layout.
    Baseline {
        #[command(flatten)]
        exp: Experiment,
        /// dense, random or global.
        #[arg(long)]
        mode: SamplingMode,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate the synthetic dataset, toy models and an experiment config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        train_per_class: usize,
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().seed)]
        seed: u64,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn csv_lines(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn split_vectors(pipeline: &Pipeline, manifest: &DatasetManifest, split: Split) -> Result<(Vec<Vec<f64>>, Vec<String>, Vec<String>)> {
    let manifest = pipeline.prepare_manifest(manifest)?;
    let reps = pipeline.representations(&manifest)?;
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (e, r) in manifest.entries.iter().zip(reps) {
        if e.split == split {
            xs.push(r.concatenated);
            labels.push(e.label.clone());
            ids.push(e.relative_path.clone());
        }
    }
    if xs.is_empty() {
        bail!("manifest has no {split} images");
    }
    Ok((xs, labels, ids))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { manifest, root } => {
            let m = ingest_dataset(&manifest, root.as_deref())?;
            println!("label,split,images");
            for ((label, split), n) in m.counts() {
                println!("{label},{split},{n}");
            }
            eprintln!("{} images, {} classes", m.entries.len(), m.labels().len());
        }
        Command::DismapDump {
            config,
            image,
            label,
            raw,
            out,
        } => {
            let pipeline = Pipeline::load(PipelineConfig::load(&config)?)?;
            let img = open_image(&image)?;
            let map = pipeline.dismap(&img, label.as_deref())?;
            eprintln!("class {} ({})", map.class_used, map.class_source);
            emit(out.as_deref(), &grid_to_csv(if raw { &map.raw } else { &map.normalized }))?;
        }
        Command::SelectRegions {
            config,
            image,
            label,
            manifest,
            out,
        } => {
            let pipeline = Pipeline::load(PipelineConfig::load(&config)?)?;
            let mut sets = Vec::new();
            if let Some(image) = image {
                let img = open_image(&image)?;
                let id = image.to_string_lossy();
                if let Some(set) = pipeline.regions(&img, &id, label.as_deref())? {
                    sets.push(set);
                }
            } else if let Some(manifest) = manifest {
                let m = pipeline.prepare_manifest(&ingest_dataset(&manifest, None)?)?;
                for e in &m.entries {
                    if let (_, Some(set)) = pipeline.entry_regions(&m, e)? {
                        sets.push(set);
                    }
                }
            }
            emit(out.as_deref(), &regions_csv(&sets))?;
        }
        Command::DumpPatches { exp, out, limit } => {
            let (pipeline, manifest) = exp.load()?;
            let n = dump_patches(&pipeline, &manifest, &out, limit)?;
            eprintln!("wrote {n} patches to {}", out.display());
        }
        Command::Features { exp } => {
            let (pipeline, manifest) = exp.load()?;
            let manifest = pipeline.prepare_manifest(&manifest)?;
            let pooled = pipeline.materialize(&manifest)?;
            eprintln!("{} images cached in {}", pooled.len(), pipeline.cache_path(&manifest).display());
        }
        Command::Train { exp, model } => {
            let (pipeline, manifest) = exp.load()?;
            let (xs, labels, _) = split_vectors(&pipeline, &manifest, Split::Train)?;
            let trained = svm::train(&xs, &labels, &pipeline.config.train)?;
            trained.save(&model)?;
            eprintln!(
                "trained {} classes on {} images (dim {}), saved {}",
                trained.num_classes(),
                xs.len(),
                trained.dim(),
                model.display()
            );
        }
        Command::Evaluate {
            exp,
            model,
            report,
            predictions,
        } => {
            let (pipeline, manifest) = exp.load()?;
            let (report_text, preds) = match model {
                Some(path) => {
                    let svm = SvmModel::load(&path)?;
                    let (xs, truth, ids) = split_vectors(&pipeline, &manifest, Split::Test)?;
                    let predicted = xs
                        .iter()
                        .map(|x| svm.predict_label(x).map(str::to_string))
                        .collect::<adired::Result<Vec<_>>>()?;
                    let acc = svm::accuracy(&predicted, &truth)?;
                    let rows = ids
                        .into_iter()
                        .zip(truth)
                        .zip(predicted)
                        .map(|((i, t), p)| (i, t, p))
                        .collect::<Vec<_>>();
                    (format!("accuracy,n_test\n{acc:.4},{}\n", rows.len()), rows)
                }
                None => {
                    let outcome = pipeline.run_experiment(&manifest)?;
                    (outcome.report.to_csv(), outcome.predictions)
                }
            };
            emit(report.as_deref(), &report_text)?;
            if let Some(p) = predictions {
                let rows = preds.into_iter().map(|(i, t, p)| format!("{i},{t},{p}"));
                emit(Some(&p), &csv_lines("relative_path,truth,predicted", rows))?;
            }
        }
        Command::SweepThreshold {
            exp,
            thresholds,
            scale,
            out,
        } => {
            let (pipeline, manifest) = exp.load()?;
            let rows = sweep_threshold(&pipeline, &manifest, &thresholds, scale)?;
            emit(out.as_deref(), &csv_lines(SweepRow::CSV_HEADER, rows.iter().map(SweepRow::csv_row)))?;
        }
        Command::ClassStats { exp, out } => {
            let (pipeline, manifest) = exp.load()?;
            let stats = per_class_region_stats(&pipeline, &manifest)?;
            emit(
                out.as_deref(),
                &csv_lines(ClassRegionStats::CSV_HEADER, stats.iter().map(ClassRegionStats::csv_row)),
            )?;
        }
        Command::Baseline { exp, mode, report } => {
            if mode == SamplingMode::Adired {
                bail!("baseline mode must be dense, random or global");
            }
            let (pipeline, manifest) = exp.load()?;
            let mut config = pipeline.config.clone();
            config.run.mode = mode;
            let outcome = pipeline.with_config(config)?.run_experiment(&manifest)?;
            emit(report.as_deref(), &csv_lines(ExperimentReport::CSV_HEADER, [outcome.report.csv_row()]))?;
        }
        Command::Synth {
            out,
            train_per_class,
            test_per_class,
            seed,
        } => {
            let spec = SyntheticSpec {
                train_per_class,
                test_per_class,
                seed,
                ..SyntheticSpec::default()
            };
            let config = write_experiment(&out, &spec)?;
            eprintln!("wrote {}", config.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
