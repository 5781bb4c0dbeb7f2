//! Three-scale image representation: a global feature vector from the whole
//! image, element-wise max pooling over the coarse and fine patch features,
//! L2 normalization per scale, and concatenation `[global, coarse, fine]`.

use std::fmt;
use std::sync::Arc;

use image::RgbImage;

use crate::backend::{crop, FeatureExtractor, FeatureVector};
use crate::error::{Error, Result};
use crate::regions::{LocalScale, RegionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScaleId {
    Global,
    Coarse,
    Fine,
}

impl fmt::Display for ScaleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleId::Global => "global",
            ScaleId::Coarse => "coarse",
            ScaleId::Fine => "fine",
        })
    }
}

/// One extractor per scale.
#[derive(Clone)]
pub struct ScaleSpecs {
    pub global: Arc<dyn FeatureExtractor>,
    pub coarse: Arc<dyn FeatureExtractor>,
    pub fine: Arc<dyn FeatureExtractor>,
}

impl ScaleSpecs {
    pub fn extractor(&self, scale: ScaleId) -> &Arc<dyn FeatureExtractor> {
        match scale {
            ScaleId::Global => &self.global,
            ScaleId::Coarse => &self.coarse,
            ScaleId::Fine => &self.fine,
        }
    }

    pub fn local(&self, scale: LocalScale) -> &Arc<dyn FeatureExtractor> {
        match scale {
            LocalScale::Coarse => &self.coarse,
            LocalScale::Fine => &self.fine,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.global.dim(), self.coarse.dim(), self.fine.dim()]
    }
}

/// Element-wise maximum of equally sized vectors.
pub fn intra_scale_pool(vectors: &[FeatureVector]) -> Result<FeatureVector> {
    let (first, rest) = vectors
        .split_first()
        .ok_or(Error::EmptyInput("no feature vectors to pool"))?;
    let mut out = first.clone();
    for v in rest {
        if v.dim() != out.dim() {
            return Err(Error::DimensionMismatch {
                expected: out.dim(),
                actual: v.dim(),
            });
        }
        for (o, x) in out.values.iter_mut().zip(&v.values) {
            *o = o.max(*x);
        }
    }
    Ok(out)
}

/// `v / ||v||_2`, accumulated in `f64`. The zero vector maps to itself.
pub fn l2_normalize(values: &[f32]) -> Vec<f64> {
    let norm = values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| f64::from(v) / norm).collect()
}

/// Pre-normalization per-scale features of one image; what the feature cache
/// stores. Local blocks are empty for global-only representations.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeatures {
    pub global: Vec<f32>,
    pub coarse: Vec<f32>,
    pub fine: Vec<f32>,
    pub n_coarse: u32,
    pub n_fine: u32,
}

impl PooledFeatures {
    pub fn patch_count(&self) -> u32 {
        self.n_coarse + self.n_fine
    }

    pub fn block_dims(&self) -> [usize; 3] {
        [self.global.len(), self.coarse.len(), self.fine.len()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRepresentation {
    pub image_id: String,
    pub global: Vec<f64>,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub concatenated: Vec<f64>,
}

impl ImageRepresentation {
    pub fn from_pooled(image_id: impl Into<String>, pooled: &PooledFeatures) -> Self {
        let global = l2_normalize(&pooled.global);
        let coarse = l2_normalize(&pooled.coarse);
        let fine = l2_normalize(&pooled.fine);
        let concatenated = global.iter().chain(&coarse).chain(&fine).copied().collect();
        Self {
            image_id: image_id.into(),
            global,
            coarse,
            fine,
            concatenated,
        }
    }

    pub fn dim(&self) -> usize {
        self.concatenated.len()
    }
}

fn pool_local(image: &RgbImage, regions: &RegionSet, scale: LocalScale, extractor: &dyn FeatureExtractor) -> Result<Vec<f32>> {
    let features = regions
        .of_scale(scale)
        .map(|p| extractor.extract(&crop(image, p.left, p.top, p.side, p.side)?))
        .collect::<Result<Vec<_>>>()?;
    if features.is_empty() {
        log::warn!(
            "image {}: no {scale} patches, using a zero block",
            regions.image_id
        );
        return Ok(vec![0.0; extractor.dim()]);
    }
    Ok(intra_scale_pool(&features)?.values)
}

/// Extract and pool features at every scale. With `regions = None` only the
/// global block is produced.
pub fn pool_features(image: &RgbImage, regions: Option<&RegionSet>, scales: &ScaleSpecs) -> Result<PooledFeatures> {
    let global = scales.global.extract(image)?.values;
    let Some(regions) = regions else {
        return Ok(PooledFeatures {
            global,
            coarse: Vec::new(),
            fine: Vec::new(),
            n_coarse: 0,
            n_fine: 0,
        });
    };
    Ok(PooledFeatures {
        global,
        coarse: pool_local(image, regions, LocalScale::Coarse, scales.coarse.as_ref())?,
        fine: pool_local(image, regions, LocalScale::Fine, scales.fine.as_ref())?,
        n_coarse: regions.count(LocalScale::Coarse) as u32,
        n_fine: regions.count(LocalScale::Fine) as u32,
    })
}

pub fn build_representation(image: &RgbImage, regions: &RegionSet, scales: &ScaleSpecs) -> Result<ImageRepresentation> {
    let pooled = pool_features(image, Some(regions), scales)?;
    Ok(ImageRepresentation::from_pooled(regions.image_id.clone(), &pooled))
}
