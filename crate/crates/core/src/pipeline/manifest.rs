//! Dataset manifests: CSV rows `relative_path,label,split`.
//!
//! `split` is `train` or `test`, optionally qualified by a fold index
//! (`train/3`, `test/3`) for benchmarks that ship several fixed splits. An
//! optional header row with exactly those column names is skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub relative_path: String,
    pub label: String,
    pub split: Split,
    pub fold: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn parse_split(raw: &str) -> Option<(Split, Option<u32>)> {
    let (kind, fold) = match raw.split_once('/') {
        Some((k, f)) => (k, Some(f.parse::<u32>().ok()?)),
        None => (raw, None),
    };
    let split = match kind {
        "train" => Split::Train,
        "test" => Split::Test,
        _ => return None,
    };
    Some((split, fold))
}

/// Parse and validate a manifest. Paths resolve against `root`, which
/// defaults to the manifest's directory.
pub fn ingest_dataset(manifest: impl AsRef<Path>, root: Option<&Path>) -> Result<DatasetManifest> {
    let manifest = manifest.as_ref();
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let bad = |line: usize, message: String| Error::Manifest {
        path: manifest.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(manifest)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(manifest, io),
            other => bad(0, format!("{other:?}")),
        })?;

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(i + 1, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let fields: Vec<&str> = record.iter().collect();
        if i == 0 && fields == ["relative_path", "label", "split"] {
            continue;
        }
        let [path, label, split] = fields[..] else {
            return Err(bad(line, format!("expected 3 columns, found {}", fields.len())));
        };
        if path.is_empty() {
            return Err(bad(line, "empty relative_path".into()));
        }
        if label.is_empty() {
            return Err(bad(line, "empty label".into()));
        }
        let (split, fold) = parse_split(split)
            .ok_or_else(|| bad(line, format!("split must be train, test, train/<k> or test/<k>; got `{split}`")))?;
        if !seen.insert((path.to_string(), fold)) {
            return Err(bad(line, format!("duplicate relative_path `{path}`")));
        }
        let full = root.join(path);
        if !full.is_file() {
            return Err(Error::MissingFile(full));
        }
        entries.push(ManifestEntry {
            relative_path: path.to_string(),
            label: label.to_string(),
            split,
            fold,
        });
    }
    if entries.is_empty() {
        return Err(bad(0, "manifest has no entries".into()));
    }
    let name = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(DatasetManifest { name, root, entries })
}

impl DatasetManifest {
    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.relative_path)
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Image counts per `(label, split)`.
    pub fn counts(&self) -> BTreeMap<(String, Split), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.label.clone(), e.split)).or_insert(0) += 1;
        }
        out
    }

    /// Keep only entries of `fold`; unqualified entries belong to every fold.
    pub fn select_fold(&self, fold: u32) -> DatasetManifest {
        DatasetManifest {
            name: format!("{}-fold{fold}", self.name),
            root: self.root.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.fold.is_none_or(|f| f == fold))
                .cloned()
                .collect(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}
