//! End-to-end experiment driver: manifest ingestion, per-image region
//! selection and feature pooling with a resumable cache, SVM training and
//! evaluation, threshold sweeps and per-class region statistics.

mod config;
mod experiment;
mod manifest;
mod sampling;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use sha2::{Digest, Sha256};

pub use config::{load_label_map, ModelPaths, PipelineConfig, RunConfig, SamplingMode, CACHE_DIR_ENV};
pub use experiment::{
    dump_patches, per_class_region_stats, regions_csv, sweep_threshold, ClassRegionStats, ExperimentOutcome,
    ExperimentReport, SweepRow, SweepScale,
};
pub use manifest::{ingest_dataset, DatasetManifest, ManifestEntry, Split};
pub use sampling::{sample_dense, sample_random, stable_hash, DENSE_GRID, RANDOM_PER_SCALE};

use crate::aggregate::{pool_features, PooledFeatures, ScaleSpecs};
use crate::backend::{load_model, open_image, BackendKind, DisNet};
use crate::cache::{ConfigHash, FeatureCache};
use crate::dismap::{select_dismap_class, DisMap};
use crate::error::{Error, Result};
use crate::regions::{select_regions, RegionSet};

/// Records computed between cache flushes.
const FLUSH_EVERY: usize = 64;

/// Loaded models plus the configuration that drives them.
#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub disnet: Option<Arc<dyn DisNet>>,
    pub scales: ScaleSpecs,
    label_map: BTreeMap<String, String>,
    /// Digest of the model and label-map contents.
    fingerprints: Fingerprints,
}

#[derive(Clone, Debug, Default)]
struct Fingerprints {
    disnet: Vec<u8>,
    extractors: Vec<u8>,
    label_map: Vec<u8>,
}

fn file_digest(hasher: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(&bytes);
    Ok(())
}

impl Pipeline {
    /// Load every model named by `config`.
    pub fn load(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let m = &config.models;
        let disnet = m
            .disnet
            .as_ref()
            .map(|p| load_model(p, BackendKind::DisNet)?.into_disnet())
            .transpose()?;
        let extractor = |p: &PathBuf| load_model(p, BackendKind::FeatureExtractor)?.into_extractor();
        let scales = ScaleSpecs {
            global: extractor(&m.global)?,
            coarse: extractor(&m.coarse)?,
            fine: extractor(&m.fine)?,
        };

        let mut fp = Fingerprints::default();
        if let Some(p) = &m.disnet {
            let mut h = Sha256::new();
            file_digest(&mut h, p)?;
            fp.disnet = h.finalize().to_vec();
        }
        let mut h = Sha256::new();
        for p in [&m.global, &m.coarse, &m.fine] {
            file_digest(&mut h, p)?;
        }
        fp.extractors = h.finalize().to_vec();

        let label_map = match &config.run.label_map {
            Some(p) => {
                let mut h = Sha256::new();
                file_digest(&mut h, p)?;
                fp.label_map = h.finalize().to_vec();
                load_label_map(p)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            config,
            disnet,
            scales,
            label_map,
            fingerprints: fp,
        })
    }

    /// Assemble a pipeline from in-memory models. Cache identity falls back
    /// to the model descriptors.
    pub fn from_parts(
        config: PipelineConfig,
        disnet: Option<Arc<dyn DisNet>>,
        scales: ScaleSpecs,
        label_map: BTreeMap<String, String>,
    ) -> Result<Self> {
        config.selection.validate()?;
        config.train.validate()?;
        if config.run.mode == SamplingMode::Adired && disnet.is_none() {
            return Err(Error::Config("adaptive mode needs a disnet".into()));
        }
        let describe = |parts: Vec<String>| Sha256::digest(parts.join("\n").as_bytes()).to_vec();
        let fingerprints = Fingerprints {
            disnet: disnet
                .as_ref()
                .map(|d| describe(vec![format!("{:?}", d.descriptor()), format!("{:?}", d.classifier())]))
                .unwrap_or_default(),
            extractors: describe(
                [&scales.global, &scales.coarse, &scales.fine]
                    .iter()
                    .map(|e| format!("{:?}", e.descriptor()))
                    .collect(),
            ),
            label_map: describe(label_map.iter().map(|(k, v)| format!("{k},{v}")).collect()),
        };
        Ok(Self {
            config,
            disnet,
            scales,
            label_map,
            fingerprints,
        })
    }

    /// Copy of this pipeline with different settings, sharing the models.
    pub fn with_config(&self, config: PipelineConfig) -> Result<Self> {
        config.selection.validate()?;
        config.train.validate()?;
        if config.run.mode == SamplingMode::Adired && self.disnet.is_none() {
            return Err(Error::Config("adaptive mode needs a disnet".into()));
        }
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn mode(&self) -> SamplingMode {
        self.config.run.mode
    }

    /// SHA-256 over every setting that changes cached features.
    pub fn config_hash(&self) -> ConfigHash {
        let mut h = Sha256::new();
        h.update(b"adired-features v1\0");
        h.update(self.mode().as_str());
        h.update([0]);
        h.update(&self.fingerprints.extractors);
        match self.mode() {
            SamplingMode::Adired => {
                let s = &self.config.selection;
                h.update(s.t_coarse.to_le_bytes());
                h.update(s.t_fine.to_le_bytes());
                h.update([u8::from(s.fallback_on_empty)]);
                h.update(&self.fingerprints.disnet);
                h.update(&self.fingerprints.label_map);
            }
            SamplingMode::Random => h.update(self.config.run.seed.to_le_bytes()),
            SamplingMode::Dense | SamplingMode::Global => {}
        }
        h.finalize().into()
    }

    pub fn cache_path(&self, manifest: &DatasetManifest) -> PathBuf {
        let hash = self.config_hash();
        let short: String = hash[..8].iter().map(|b| format!("{b:02x}")).collect();
        self.config.cache_root().join(format!("{}-{short}.adir", manifest.name))
    }

    /// Apply `run.fold`. A manifest with fold-qualified rows needs one.
    pub fn prepare_manifest(&self, manifest: &DatasetManifest) -> Result<DatasetManifest> {
        let has_folds = manifest.entries.iter().any(|e| e.fold.is_some());
        match (self.config.run.fold, has_folds) {
            (Some(k), _) => {
                let m = manifest.select_fold(k);
                if m.entries.is_empty() {
                    return Err(Error::Config(format!("fold {k} selects no images")));
                }
                Ok(m)
            }
            (None, true) => Err(Error::Config(
                "manifest has fold-qualified splits; set run.fold".into(),
            )),
            (None, false) => Ok(manifest.clone()),
        }
    }

    fn disnet(&self) -> Result<&Arc<dyn DisNet>> {
        self.disnet
            .as_ref()
            .ok_or_else(|| Error::Config("no disnet configured".into()))
    }

    /// Dis-Map of `image`, driven by `ground_truth` when it maps onto one of
    /// the DisNet's classes.
    pub fn dismap(&self, image: &RgbImage, ground_truth: Option<&str>) -> Result<DisMap> {
        let disnet = self.disnet()?;
        let out = disnet.forward(image)?;
        let mapped = ground_truth.map(|gt| self.label_map.get(gt).map_or(gt, String::as_str));
        let (class, source) = select_dismap_class(mapped, disnet.classifier().labels(), out.predicted_class);
        DisMap::new(&out.activations, disnet.classifier(), class, source)
    }

    /// Local patches for one image under the configured mode; `None` for
    /// global-only representations.
    pub fn regions(&self, image: &RgbImage, image_id: &str, ground_truth: Option<&str>) -> Result<Option<RegionSet>> {
        let (w, h) = image.dimensions();
        Ok(match self.mode() {
            SamplingMode::Adired => {
                let map = self.dismap(image, ground_truth)?;
                Some(select_regions(&map, &self.config.selection, w, h, image_id)?)
            }
            SamplingMode::Dense => Some(sample_dense(w, h, image_id)?),
            SamplingMode::Random => Some(sample_random(w, h, self.config.run.seed, image_id)?),
            SamplingMode::Global => None,
        })
    }

    /// Ground truth is only revealed to region selection for training images.
    pub fn ground_truth_for(entry: &ManifestEntry) -> Option<&str> {
        (entry.split == Split::Train).then_some(entry.label.as_str())
    }

    pub fn entry_regions(&self, manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<(RgbImage, Option<RegionSet>)> {
        let image = open_image(manifest.path_of(entry))?;
        let regions = self.regions(&image, &entry.relative_path, Self::ground_truth_for(entry))?;
        Ok((image, regions))
    }

    pub fn pooled_for_entry(&self, manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<PooledFeatures> {
        let (image, regions) = self.entry_regions(manifest, entry)?;
        pool_features(&image, regions.as_ref(), &self.scales)
    }

    fn block_dims(&self) -> [usize; 3] {
        let [g, c, f] = self.scales.dims();
        if self.mode() == SamplingMode::Global {
            [g, 0, 0]
        } else {
            [g, c, f]
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.run.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }

    /// Pooled features for every entry, in manifest order. Cached records are
    /// reused and new ones are flushed every [`FLUSH_EVERY`] images, so an
    /// interrupted run resumes where it stopped.
    pub fn materialize(&self, manifest: &DatasetManifest) -> Result<Vec<PooledFeatures>> {
        use rayon::prelude::*;

        let mut cache = FeatureCache::open(self.cache_path(manifest), self.config_hash(), self.block_dims())?;
        let mut missing: Vec<&ManifestEntry> = Vec::new();
        let mut queued = std::collections::HashSet::new();
        for e in &manifest.entries {
            let key = cache_key(e);
            if cache.get(&key).is_none() && queued.insert(key) {
                missing.push(e);
            }
        }
        if !missing.is_empty() {
            log::info!(
                "{}: computing {} of {} images ({} cached)",
                manifest.name,
                missing.len(),
                manifest.entries.len(),
                manifest.entries.len() - missing.len()
            );
            let pool = self.thread_pool()?;
            for chunk in missing.chunks(FLUSH_EVERY) {
                let computed: Vec<Result<PooledFeatures>> =
                    pool.install(|| chunk.par_iter().map(|e| self.pooled_for_entry(manifest, e)).collect());
                for (e, r) in chunk.iter().zip(computed) {
                    let r = r.map_err(|err| {
                        log::error!("{}: {err}", e.relative_path);
                        err
                    })?;
                    cache.insert(cache_key(e), r)?;
                }
                cache.flush()?;
            }
        }
        Ok(manifest
            .entries
            .iter()
            .map(|e| cache.get(&cache_key(e)).expect("every entry computed").clone())
            .collect())
    }
}

/// Region selection differs between splits, so the split is part of the key.
fn cache_key(e: &ManifestEntry) -> String {
    format!("{}:{}", e.split, e.relative_path)
}
