use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::Array3;

use crate::error::{Error, Result};

/// Bilinear resize to exactly `width x height`. No aspect-ratio preservation.
/// When downscaling, the triangle kernel widens with the scale factor, so
/// detail finer than the target sampling rate is averaged out.
pub fn resize_bilinear(image: &RgbImage, width: u32, height: u32) -> Result<RgbImage> {
    if image.width() == 0 || image.height() == 0 || width == 0 || height == 0 {
        return Err(Error::ZeroArea);
    }
    if image.dimensions() == (width, height) {
        return Ok(image.clone());
    }
    Ok(imageops::resize(image, width, height, FilterType::Triangle))
}

/// Copy out the `width x height` block at `(left, top)`.
pub fn crop(image: &RgbImage, left: u32, top: u32, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroArea);
    }
    if left + width > image.width() || top + height > image.height() {
        return Err(Error::PatchTooLarge {
            side: width.max(height),
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(imageops::crop_imm(image, left, top, width, height).to_image())
}

/// Channel-first `[3, H, W]` array of intensities scaled to `[0, 1]`.
pub fn to_planar(image: &RgbImage) -> Array3<f64> {
    let (w, h) = image.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        f64::from(image.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn resize_keeps_uniform_images_uniform() {
        let img = RgbImage::from_pixel(40, 30, Rgb([100, 100, 100]));
        let out = resize_bilinear(&img, 17, 9).unwrap();
        assert_eq!(out.dimensions(), (17, 9));
        assert!(out.pixels().all(|p| p.0 == [100, 100, 100]));
    }

    #[test]
    fn crop_checks_bounds() {
        let img = RgbImage::new(10, 10);
        assert!(crop(&img, 5, 5, 6, 2).is_err());
        assert!(crop(&img, 0, 0, 0, 2).is_err());
        assert_eq!(crop(&img, 4, 4, 6, 6).unwrap().dimensions(), (6, 6));
    }

    #[test]
    fn planar_layout_is_channel_row_column() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, Rgb([255, 0, 51]));
        let p = to_planar(&img);
        assert_eq!(p.dim(), (3, 1, 2));
        assert_eq!(p[[0, 0, 1]], 1.0);
        assert!((p[[2, 0, 1]] - 0.2).abs() < 1e-12);
    }
}
