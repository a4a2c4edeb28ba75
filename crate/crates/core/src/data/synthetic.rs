//! Seeded synthetic stereo pairs whose label follows a known degradation.

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::images::normalize_rgb;
use super::manifest::{DatasetManifest, LabelEntry, ManifestEntry, Source};
use super::split::{Dataset, Sample};
use super::DataError;
use crate::model::DisplayMode;

struct SyntheticPair {
    left: RgbImage,
    right: RgbImage,
    /// Latent quality in `[0, 1]`.
    quality: f64,
}

/// Smooth sinusoidal scene, degraded by noise that grows as quality drops.
/// The right view is the left scene shifted by a small disparity.
fn synthetic_pair(rng: &mut ChaCha8Rng, width: u32, height: u32) -> SyntheticPair {
    let quality: f64 = rng.random_range(0.0..1.0);
    let waves: Vec<[f64; 5]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
            ]
        })
        .collect();
    let disparity = rng.random_range(1..=3) as f64;
    let noise = Normal::new(0.0, 0.45 * (1.0 - quality) + 1e-3).expect("positive std");
    let mut render = |shift: f64| {
        RgbImage::from_fn(width, height, |x, y| {
            let (u, v) = ((x as f64 + shift) / width as f64, y as f64 / height as f64);
            let mut px = [0.0; 3];
            for (c, w) in waves.iter().enumerate() {
                px[c] = w[3] + 0.5 * w[4] * (2.0 * PI * (w[0] * u + w[1] * v) + w[2]).sin();
            }
            Rgb(px.map(|p| ((p + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    };
    let left = render(0.0);
    let right = render(disparity);
    SyntheticPair { left, right, quality }
}

fn mos_for(quality: f64, mode: DisplayMode) -> f64 {
    let offset = match mode {
        DisplayMode::Flat => 0.0,
        DisplayMode::Window => 3.0,
        DisplayMode::Immersive => -2.0,
    };
    (15.0 + 70.0 * quality + offset).clamp(0.0, 100.0)
}

/// In-memory dataset of `n` pairs at `side`×`side`, labelled for `mode`.
pub fn synthetic_dataset(n: usize, side: u32, mode: DisplayMode, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let p = synthetic_pair(&mut rng, side, side);
            Sample {
                image_id: format!("syn{i:04}"),
                scene_id: None,
                source: Source::Captured,
                left: normalize_rgb(&p.left, side),
                right: mode.is_stereo().then(|| normalize_rgb(&p.right, side)),
                mos: Some(mos_for(p.quality, mode)),
            }
        })
        .collect();
    Dataset { samples }
}

/// Writes `n` PNG pairs and `manifest.json` into `dir`, labelled for all modes.
/// Every fourth image is a synthesized rendering of the preceding captured scene.
pub fn write_synthetic_dataset(dir: &Path, n: usize, resolution: u32, seed: u64) -> Result<DatasetManifest, DataError> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = DatasetManifest::default();
    for i in 0..n {
        let p = synthetic_pair(&mut rng, resolution, resolution);
        let id = format!("img{i:04}");
        let (l, r) = (format!("{id}_L.png"), format!("{id}_R.png"));
        let save = |img: &RgbImage, name: &str| {
            img.save(dir.join(name)).map_err(|e| DataError::Decode { path: dir.join(name), msg: e.to_string() })
        };
        save(&p.left, &l)?;
        save(&p.right, &r)?;
        let synthesized = i % 4 == 3;
        let scene = if synthesized { i - 1 } else { i };
        manifest.entries.push(ManifestEntry {
            image_id: id.clone(),
            left_path: l.into(),
            right_path: r.into(),
            source: if synthesized { Source::Synthesized } else { Source::Captured },
            scene_id: Some(format!("scene{scene:04}")),
            width: resolution,
            height: resolution,
            split: None,
        });
        for mode in DisplayMode::ALL {
            manifest.labels.push(LabelEntry { image_id: id.clone(), mode, mos: mos_for(p.quality, mode) });
        }
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
