//! 8-bit PNG image IO. Stored values map to linear [0, 1] by dividing by 255
//! with no gamma transform, matching how the evaluation metrics compare
//! images.

use std::path::Path;

use crate::error::Result;
use crate::image::{ImageGray, ImageRgb};

pub fn load_image_rgb(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = img.as_raw().iter().map(|v| *v as f64 / 255.0).collect();
    ImageRgb::from_data(w, h, data)
}

pub fn save_image_rgb(path: impl AsRef<Path>, img: &ImageRgb) -> Result<()> {
    let mut out = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let rgb = img.get(x as usize, y as usize);
        for c in 0..3 {
            p.0[c] = (rgb[c].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out.save(path)?;
    Ok(())
}

/// Save a single-channel map as 8-bit PNG, linearly mapping `[lo, hi]` to
/// `[0, 255]` (diagnostic export for alpha and depth maps).
pub fn save_image_gray(path: impl AsRef<Path>, img: &ImageGray, lo: f64, hi: f64) -> Result<()> {
    let span = (hi - lo).max(1e-12);
    let mut out = image::GrayImage::new(img.width() as u32, img.height() as u32);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let v = (img.get(x as usize, y as usize) - lo) / span;
        p.0[0] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    out.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_for_8bit_values() {
        let mut img = ImageRgb::zeros(5, 4);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let tmp = tempfile::NamedTempFile::with_suffix(".png").unwrap();
        save_image_rgb(tmp.path(), &img).unwrap();
        let back = load_image_rgb(tmp.path()).unwrap();
        assert_eq!(back, img);
    }
}
