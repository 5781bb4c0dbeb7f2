//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [run]
//! mode = "adired"          # adired | dense | random | global
//! seed = 0
//! workers = 0              # 0 = one per core
//! cache_dir = "cache"      # overridden by ADIRED_CACHE_DIR
//! label_map = "map.csv"    # dataset_label,disnet_label rows
//! fold = 1
//!
//! [models]
//! disnet = "disnet.adirtoy"
//! global = "global.adirtoy"
//! coarse = "coarse.adirtoy"
//! fine = "fine.adirtoy"
//!
//! [selection]
//! t_coarse = 150.0
//! t_fine = 100.0
//! fallback_on_empty = true
//!
//! [train]
//! c = 0.02
//! max_epochs = 1000
//! tolerance = 1e-6
//! seed = 0
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::SelectionConfig;
use crate::svm::TrainConfig;

pub const CACHE_DIR_ENV: &str = "ADIRED_CACHE_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Patches centred on thresholded Dis-Map peaks.
    #[default]
    Adired,
    /// Fixed grid of patch centres.
    Dense,
    /// Uniformly random patch positions.
    Random,
    /// Whole-image features only.
    Global,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Adired => "adired",
            SamplingMode::Dense => "dense",
            SamplingMode::Random => "random",
            SamplingMode::Global => "global",
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adired" => Ok(SamplingMode::Adired),
            "dense" => Ok(SamplingMode::Dense),
            "random" => Ok(SamplingMode::Random),
            "global" => Ok(SamplingMode::Global),
            other => Err(Error::Config(format!(
                "unknown mode `{other}`; expected adired, dense, random or global"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: SamplingMode,
    pub seed: u64,
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
    pub label_map: Option<PathBuf>,
    pub fold: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub disnet: Option<PathBuf>,
    pub global: PathBuf,
    pub coarse: PathBuf,
    pub fine: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub models: ModelPaths,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative_to(dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.train.validate()?;
        if self.run.mode == SamplingMode::Adired && self.models.disnet.is_none() {
            return Err(Error::Config("mode = \"adired\" needs models.disnet".into()));
        }
        Ok(())
    }

    fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = self.models.disnet.as_mut() {
            fix(p);
        }
        fix(&mut self.models.global);
        fix(&mut self.models.coarse);
        fix(&mut self.models.fine);
        if let Some(p) = self.run.cache_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.run.label_map.as_mut() {
            fix(p);
        }
    }

    /// `ADIRED_CACHE_DIR`, else `run.cache_dir`, else `.adired-cache`.
    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.run.cache_dir.clone())
            .unwrap_or_else(|| PathBuf::from(".adired-cache"))
    }
}

/// Read `dataset_label,disnet_label` rows. A header row naming those columns
/// is skipped.
pub fn load_label_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        if i == 0 && &rec[0] == "dataset_label" {
            continue;
        }
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}
