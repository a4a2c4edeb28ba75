//! JSON dataset manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::DisplayMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Captured,
    Synthesized,
}

/// Side of a split, when the manifest fixes it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub left_path: PathBuf,
    pub right_path: PathBuf,
    pub source: Source,
    /// Scene shared by a captured image and the synthesized images derived from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Side>,
}

impl ManifestEntry {
    /// Grouping key for splits: the scene if any, else the image itself.
    pub fn group(&self) -> &str {
        self.scene_id.as_deref().unwrap_or(&self.image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub image_id: String,
    pub mode: DisplayMode,
    pub mos: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub labels: Vec<LabelEntry>,
}

impl DatasetManifest {
    /// Reads a manifest; relative image paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bad = |msg: String| DataError::Manifest { path: path.to_path_buf(), msg };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => DataError::MissingFile(path.to_path_buf()),
            _ => DataError::Io(e),
        })?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            for p in [&mut e.left_path, &mut e.right_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        m.validate().map_err(bad)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.image_id.is_empty() {
                return Err("empty image_id".into());
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(format!("duplicate image_id `{}`", e.image_id));
            }
            if e.width == 0 || e.height == 0 {
                return Err(format!("{}: zero resolution", e.image_id));
            }
        }
        let mut labelled = BTreeSet::new();
        for l in &self.labels {
            if !seen.contains(l.image_id.as_str()) {
                return Err(format!("label for unknown image `{}`", l.image_id));
            }
            if !l.mos.is_finite() {
                return Err(format!("non-finite MOS for `{}`", l.image_id));
            }
            if !labelled.insert((l.image_id.as_str(), l.mode)) {
                return Err(format!("duplicate {} label for `{}`", l.mode, l.image_id));
            }
        }
        Ok(())
    }

    pub fn label_map(&self) -> BTreeMap<(String, DisplayMode), f64> {
        self.labels.iter().map(|l| ((l.image_id.clone(), l.mode), l.mos)).collect()
    }

    pub fn label(&self, image_id: &str, mode: DisplayMode) -> Option<f64> {
        self.labels.iter().find(|l| l.image_id == image_id && l.mode == mode).map(|l| l.mos)
    }

    pub fn entry(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Replaces labels of `mode` with the given MOS values.
    pub fn set_labels(&mut self, mode: DisplayMode, mos: impl IntoIterator<Item = (String, f64)>) {
        self.labels.retain(|l| l.mode != mode);
        self.labels.extend(mos.into_iter().map(|(image_id, mos)| LabelEntry { image_id, mode, mos }));
    }
}
