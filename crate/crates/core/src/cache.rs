//! Binary feature cache, one file per (dataset, configuration).
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "ADIR"                      magic, 4 bytes
//! u32                         format version (1)
//! [u8; 32]                    configuration hash
//! u32 x 3                     block dims (global, coarse, fine)
//! record*                     until end of file:
//!   u32 + bytes               image id (utf-8)
//!   u32                       vector dim (sum of block dims)
//!   f32 x dim                 pooled, un-normalized features
//!   u32 x 2                   coarse and fine patch counts
//! ```
//!
//! Every write replaces the whole file atomically, so an interrupted run
//! leaves the previous complete cache behind.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::aggregate::PooledFeatures;
use crate::binio::{put_f32, put_str, put_u32, read_all, write_atomic, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADIR";
pub const VERSION: u32 = 1;

pub type ConfigHash = [u8; 32];

#[derive(Debug)]
pub struct FeatureCache {
    path: PathBuf,
    config_hash: ConfigHash,
    dims: [u32; 3],
    order: Vec<String>,
    records: HashMap<String, PooledFeatures>,
}

impl FeatureCache {
    pub fn new(path: impl Into<PathBuf>, config_hash: ConfigHash, dims: [usize; 3]) -> Self {
        Self {
            path: path.into(),
            config_hash,
            dims: dims.map(|d| d as u32),
            order: Vec::new(),
            records: HashMap::new(),
        }
    }

    /// Load `path` if it exists and was written for the same configuration and
    /// dims; otherwise start empty. Stale or corrupt files are ignored and
    /// will be overwritten on the next flush.
    pub fn open(path: impl Into<PathBuf>, config_hash: ConfigHash, dims: [usize; 3]) -> Result<Self> {
        let path = path.into();
        let fresh = Self::new(path.clone(), config_hash, dims);
        if !path.exists() {
            return Ok(fresh);
        }
        match Self::read(&path) {
            Ok(existing) if existing.config_hash == config_hash && existing.dims == fresh.dims => Ok(existing),
            Ok(_) => {
                log::info!("cache {} belongs to another configuration; rebuilding", path.display());
                Ok(fresh)
            }
            Err(e) => {
                log::warn!("ignoring unreadable cache {}: {e}", path.display());
                Ok(fresh)
            }
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = read_all(path)?;
        let mut r = Reader::new(&buf, path);
        if r.bytes(4)? != MAGIC {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.corrupt(format!("unsupported version {version}")));
        }
        let config_hash: ConfigHash = r.bytes(32)?.try_into().expect("32 bytes");
        let dims = [r.u32()?, r.u32()?, r.u32()?];
        let total: u32 = dims.iter().sum();
        let mut cache = Self {
            path: path.to_path_buf(),
            config_hash,
            dims,
            order: Vec::new(),
            records: HashMap::new(),
        };
        while !r.is_at_end() {
            let id = r.string()?;
            let dim = r.u32()?;
            if dim != total {
                return Err(r.corrupt(format!("record `{id}` has dim {dim}, header says {total}")));
            }
            let mut block = |n: u32| -> Result<Vec<f32>> { (0..n).map(|_| r.f32()).collect() };
            let global = block(dims[0])?;
            let coarse = block(dims[1])?;
            let fine = block(dims[2])?;
            let n_coarse = r.u32()?;
            let n_fine = r.u32()?;
            cache.insert(
                id,
                PooledFeatures {
                    global,
                    coarse,
                    fine,
                    n_coarse,
                    n_fine,
                },
            )?;
        }
        Ok(cache)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION).expect("vec write");
        out.extend_from_slice(&self.config_hash);
        for d in self.dims {
            put_u32(&mut out, d).expect("vec write");
        }
        for id in &self.order {
            let rec = &self.records[id];
            put_str(&mut out, id).expect("vec write");
            put_u32(&mut out, self.dims.iter().sum()).expect("vec write");
            for v in rec.global.iter().chain(&rec.coarse).chain(&rec.fine) {
                put_f32(&mut out, *v).expect("vec write");
            }
            put_u32(&mut out, rec.n_coarse).expect("vec write");
            put_u32(&mut out, rec.n_fine).expect("vec write");
        }
        out
    }

    pub fn flush(&self) -> Result<()> {
        write_atomic(&self.path, &self.to_bytes())
    }

    pub fn insert(&mut self, image_id: String, features: PooledFeatures) -> Result<()> {
        let dims = features.block_dims().map(|d| d as u32);
        if dims != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims.iter().sum::<u32>() as usize,
                actual: dims.iter().sum::<u32>() as usize,
            });
        }
        if self.records.insert(image_id.clone(), features).is_none() {
            self.order.push(image_id);
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&PooledFeatures> {
        self.records.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config_hash(&self) -> &ConfigHash {
        &self.config_hash
    }
}
