//! Low-level vision statistics of the dataset images.

use std::io::Write;

use image::RgbImage;

use super::images::decode_rgb;
use super::manifest::DatasetManifest;
use super::DataError;
use crate::stats::{mean, sample_std};

pub const FEATURE_NAMES: [&str; 4] = ["brightness", "contrast", "colorfulness", "sharpness"];

#[derive(Debug, Clone, PartialEq)]
pub struct LowLevelFeatures {
    pub image_id: String,
    /// Brightness, contrast, colorfulness, sharpness on the `[0, 1]` pixel scale.
    pub raw: [f64; 4],
    /// Min-max normalized across the dataset.
    pub normalized: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<LowLevelFeatures>,
    /// Fewer than two images: `normalized` repeats `raw`.
    pub degenerate: bool,
}

fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0).collect()
}

/// Shifted by the first value so constant input gives exactly zero.
fn population_std(x: &[f64]) -> f64 {
    let Some(&x0) = x.first() else { return 0.0 };
    let d: Vec<f64> = x.iter().map(|v| v - x0).collect();
    let m = mean(&d);
    (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Raw `[brightness, contrast, colorfulness, sharpness]` of one image.
///
/// Luma uses the 601 weights; colorfulness is `√(σ²_rg + σ²_yb) + 0.3·√(μ²_rg + μ²_yb)`
/// with `rg = R − G`, `yb = (R + G)/2 − B`; sharpness is the mean central-difference
/// gradient magnitude of luma over interior pixels.
pub fn image_features(img: &RgbImage) -> [f64; 4] {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let y = luma(img);
    let brightness = mean(&y);
    let contrast = population_std(&y);
    let (mut rg, mut yb) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
    for p in img.pixels() {
        let [r, g, b] = p.0.map(|v| v as f64 / 255.0);
        rg.push(r - g);
        yb.push(0.5 * (r + g) - b);
    }
    let colorfulness = (population_std(&rg).powi(2) + population_std(&yb).powi(2)).sqrt()
        + 0.3 * (mean(&rg).powi(2) + mean(&yb).powi(2)).sqrt();
    let mut grad = 0.0;
    let mut count = 0usize;
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let gx = (y[r * w + c + 1] - y[r * w + c - 1]) / 2.0;
            let gy = (y[(r + 1) * w + c] - y[(r - 1) * w + c]) / 2.0;
            grad += (gx * gx + gy * gy).sqrt();
            count += 1;
        }
    }
    let sharpness = if count == 0 { 0.0 } else { grad / count as f64 };
    [brightness, contrast, colorfulness, sharpness]
}

/// Min-max normalizes each column; constant columns map to 0.
pub fn feature_table(raw: Vec<(String, [f64; 4])>) -> FeatureTable {
    let degenerate = raw.len() < 2;
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for (_, f) in &raw {
        for k in 0..4 {
            lo[k] = lo[k].min(f[k]);
            hi[k] = hi[k].max(f[k]);
        }
    }
    let rows = raw
        .into_iter()
        .map(|(image_id, f)| {
            let normalized = if degenerate {
                f
            } else {
                std::array::from_fn(|k| if hi[k] > lo[k] { (f[k] - lo[k]) / (hi[k] - lo[k]) } else { 0.0 })
            };
            LowLevelFeatures { image_id, raw: f, normalized }
        })
        .collect();
    FeatureTable { rows, degenerate }
}

/// Features of every entry's left view.
pub fn low_level_features(manifest: &DatasetManifest) -> Result<FeatureTable, DataError> {
    let raw = manifest
        .entries
        .iter()
        .map(|e| Ok((e.image_id.clone(), image_features(&decode_rgb(&e.left_path)?))))
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(feature_table(raw))
}

/// Gaussian kernel density on `points` evenly spaced abscissae over `[0, 1]`,
/// bandwidth by Silverman's rule.
pub fn kde_series(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || points == 0 {
        return Vec::new();
    }
    let n = values.len() as f64;
    let sd = if values.len() > 1 { sample_std(values) } else { 0.0 };
    let h = if sd > 0.0 { 1.06 * sd * n.powf(-0.2) } else { 0.05 };
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|i| {
            let x = if points == 1 { 0.5 } else { i as f64 / (points - 1) as f64 };
            let d: f64 = values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect()
}

pub fn write_feature_table<W: Write>(writer: W, table: &FeatureTable) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["image_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|f| format!("{f}_raw")));
    header.extend(FEATURE_NAMES.iter().map(|f| format!("{f}_norm")));
    header.push("degenerate".into());
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.image_id.clone()];
        rec.extend(r.raw.iter().chain(&r.normalized).map(|v| format!("{v:.6}")));
        rec.push(table.degenerate.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `feature,x,density` rows for every feature's normalized column.
pub fn write_kde<W: Write>(writer: W, table: &FeatureTable, points: usize) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "x", "density"])?;
    for (k, name) in FEATURE_NAMES.iter().enumerate() {
        let col: Vec<f64> = table.rows.iter().map(|r| r.normalized[k]).collect();
        for (x, d) in kde_series(&col, points) {
            w.write_record([name.to_string(), format!("{x:.4}"), format!("{d:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
