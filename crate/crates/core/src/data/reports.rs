//! MOS distributions per mode, cross-mode differences and captured/synthesized pairs.

use std::collections::BTreeMap;
use std::io::Write;

use super::manifest::{DatasetManifest, Source};
use super::DataError;
use crate::model::DisplayMode;
use crate::stats::{mean, sample_std};
use crate::subjective::MosEntry;

pub const MOS_BINS: usize = 20;
pub const DIFF_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed and values outside are clamped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin { lo: lo + i as f64 * width, hi: lo + (i + 1) as f64 * width, count: 0 })
        .collect();
    for &v in values {
        let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
    pub bins: Vec<HistogramBin>,
}

impl Series {
    fn new(name: String, values: Vec<f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let bins = histogram(&values, lo, hi, bins);
        Self { name, values, bins }
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    pub fn std_error(&self) -> f64 {
        if self.values.len() < 2 {
            return f64::NAN;
        }
        sample_std(&self.values) / (self.values.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosReports {
    pub per_mode: Vec<Series>,
    /// `a−b` per image for (window, immersive), (immersive, 2d), (window, 2d).
    pub differences: Vec<Series>,
    /// Synthesized minus captured MOS of the same scene, per mode.
    pub matched: Vec<Series>,
}

const DIFF_PAIRS: [(DisplayMode, DisplayMode); 3] = [
    (DisplayMode::Window, DisplayMode::Immersive),
    (DisplayMode::Immersive, DisplayMode::Flat),
    (DisplayMode::Window, DisplayMode::Flat),
];

/// Builds every histogram series available from the given modes. The paired
/// captured/synthesized report needs `manifest`; entries without a scene are skipped.
pub fn mos_reports(
    tables: &BTreeMap<DisplayMode, Vec<MosEntry>>,
    manifest: Option<&DatasetManifest>,
) -> Result<MosReports, DataError> {
    let maps: BTreeMap<DisplayMode, BTreeMap<&str, f64>> =
        tables.iter().map(|(m, v)| (*m, v.iter().map(|e| (e.image_id.as_str(), e.mos)).collect())).collect();
    let per_mode = maps
        .iter()
        .map(|(m, v)| Series::new(m.to_string(), v.values().copied().collect(), 0.0, 100.0, MOS_BINS))
        .collect();
    let mut differences = Vec::new();
    for (a, b) in DIFF_PAIRS {
        let (Some(ma), Some(mb)) = (maps.get(&a), maps.get(&b)) else { continue };
        if ma.keys().ne(mb.keys()) {
            return Err(DataError::InvalidArgument(format!("{a} and {b} MOS cover different images")));
        }
        let diffs = ma.iter().map(|(id, v)| v - mb[id]).collect();
        differences.push(Series::new(format!("{a}-{b}"), diffs, -100.0, 100.0, DIFF_BINS));
    }
    let mut matched = Vec::new();
    if let Some(manifest) = manifest {
        let captured: BTreeMap<&str, &str> = manifest
            .entries
            .iter()
            .filter(|e| e.source == Source::Captured)
            .filter_map(|e| e.scene_id.as_deref().map(|s| (s, e.image_id.as_str())))
            .collect();
        for (mode, mos) in &maps {
            let mut diffs = Vec::new();
            for e in manifest.entries.iter().filter(|e| e.source == Source::Synthesized) {
                let Some(scene) = e.scene_id.as_deref() else { continue };
                let cap = captured
                    .get(scene)
                    .ok_or_else(|| DataError::UnmatchedScene { scene: scene.into(), image: e.image_id.clone() })?;
                if let (Some(s), Some(c)) = (mos.get(e.image_id.as_str()), mos.get(cap)) {
                    diffs.push(s - c);
                }
            }
            matched.push(Series::new(format!("{mode}:synthesized-captured"), diffs, -100.0, 100.0, DIFF_BINS));
        }
    }
    Ok(MosReports { per_mode, differences, matched })
}

/// `group,series,bin_lo,bin_hi,count` rows for every series.
pub fn write_histograms<W: Write>(writer: W, reports: &MosReports) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "series", "bin_lo", "bin_hi", "count"])?;
    for (group, list) in
        [("mos", &reports.per_mode), ("difference", &reports.differences), ("matched", &reports.matched)]
    {
        for s in list {
            for b in &s.bins {
                w.write_record([
                    group,
                    &s.name,
                    &format!("{:.2}", b.lo),
                    &format!("{:.2}", b.hi),
                    &b.count.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
