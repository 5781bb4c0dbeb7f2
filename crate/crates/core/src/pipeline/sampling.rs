//! Non-adaptive patch layouts used as baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::regions::{crop_patch, LocalScale, Patch, RegionSet};

/// `(columns, rows)` of the dense centre grid per scale: 10 coarse and 50
/// fine patches.
pub const DENSE_GRID: [(LocalScale, u32, u32); 2] = [(LocalScale::Coarse, 5, 2), (LocalScale::Fine, 10, 5)];

/// Patches per scale for random sampling.
pub const RANDOM_PER_SCALE: usize = 5;

/// Patches centred at `floor((i + 0.5) W / cols)`, `floor((j + 0.5) H / rows)`,
/// row-major, clamped inside the image.
pub fn sample_dense(width: u32, height: u32, image_id: impl Into<String>) -> Result<RegionSet> {
    let mut patches = Vec::new();
    for (scale, cols, rows) in DENSE_GRID {
        for j in 0..rows {
            for i in 0..cols {
                let cx = ((f64::from(i) + 0.5) * f64::from(width) / f64::from(cols)).floor() as u32;
                let cy = ((f64::from(j) + 0.5) * f64::from(height) / f64::from(rows)).floor() as u32;
                patches.push(crop_patch((cx, cy), scale, width, height)?);
            }
        }
    }
    Ok(RegionSet {
        image_id: image_id.into(),
        patches,
        thresholds: None,
    })
}

/// FNV-1a, stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// [`RANDOM_PER_SCALE`] patches per scale with top-left corners uniform over
/// all valid positions. The stream depends only on `seed` and `image_id`.
pub fn sample_random(width: u32, height: u32, seed: u64, image_id: impl Into<String>) -> Result<RegionSet> {
    let image_id = image_id.into();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&image_id));
    let mut patches = Vec::new();
    for scale in LocalScale::ALL {
        let side = scale.side(width, height);
        for _ in 0..RANDOM_PER_SCALE {
            let left = rng.random_range(0..=width.saturating_sub(side));
            let top = rng.random_range(0..=height.saturating_sub(side));
            let patch: Patch = crop_patch((left + side / 2, top + side / 2), scale, width, height)?;
            debug_assert_eq!((patch.left, patch.top), (left, top));
            patches.push(patch);
        }
    }
    Ok(RegionSet {
        image_id,
        patches,
        thresholds: None,
    })
}
