//! Image decoding, bilinear resizing and fixed per-channel normalization.

use std::path::Path;

use image::imageops::FilterType;
use image::{ImageReader, RgbImage};

use super::DataError;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation on the `[0, 1]` scale (ImageNet statistics).
pub const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

pub fn decode_rgb(path: &Path) -> Result<RgbImage, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let decode = |msg: String| DataError::Decode { path: path.to_path_buf(), msg };
    let img = ImageReader::open(path)?.with_guessed_format()?.decode().map_err(|e| decode(e.to_string()))?;
    Ok(img.to_rgb8())
}

/// `[3, side, side]` tensor: resized with bilinear filtering, then normalized.
pub fn normalize_rgb(img: &RgbImage, side: u32) -> Tensor {
    let resized = if img.dimensions() == (side, side) {
        img.clone()
    } else {
        image::imageops::resize(img, side, side, FilterType::Triangle)
    };
    let plane = (side * side) as usize;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px[c] as f64 / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
        }
    }
    Tensor::new(data, &[3, side as usize, side as usize]).expect("extents match data")
}

/// Decodes one view and returns it normalized, with its original resolution.
pub fn load_view(path: &Path, side: u32) -> Result<(Tensor, (u32, u32)), DataError> {
    let img = decode_rgb(path)?;
    Ok((normalize_rgb(&img, side), img.dimensions()))
}
