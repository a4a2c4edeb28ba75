//! Scene-grouped train/test splits and in-memory datasets.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::images::load_view;
use super::manifest::{DatasetManifest, Side, Source};
use super::DataError;
use crate::model::ModelConfig;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 0, train_fraction: 0.8 }
    }
}

/// Entry indices on each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Errors if any scene has entries on both sides.
pub fn check_leakage(manifest: &DatasetManifest, split: &Split) -> Result<(), DataError> {
    let train: BTreeSet<&str> = split.train.iter().map(|&i| manifest.entries[i].group()).collect();
    for &i in &split.test {
        let g = manifest.entries[i].group();
        if train.contains(g) {
            return Err(DataError::Leakage(g.to_string()));
        }
    }
    Ok(())
}

/// Uses the manifest's explicit sides when every entry has one; otherwise
/// shuffles scene groups with the seed and fills the training side up to
/// `round(fraction·n)` entries.
pub fn split_manifest(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split, DataError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!("train fraction {} outside (0,1)", spec.train_fraction)));
    }
    let n = manifest.entries.len();
    let split = if n > 0 && manifest.entries.iter().all(|e| e.split.is_some()) {
        let (train, test) = (0..n).partition(|&i| manifest.entries[i].split == Some(Side::Train));
        Split { train, test }
    } else {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            groups.entry(e.group()).or_default().push(i);
        }
        let mut order: Vec<Vec<usize>> = groups.into_values().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        let target = (spec.train_fraction * n as f64).round() as usize;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for g in order {
            // a group goes to training while that keeps the count closer to the target
            let after = train.len() + g.len();
            if train.len() < target && after.abs_diff(target) <= target - train.len() {
                train.extend(g);
            } else {
                test.extend(g);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Split { train, test }
    };
    check_leakage(manifest, &split)?;
    Ok(split)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image_id: String,
    pub scene_id: Option<String>,
    pub source: Source,
    /// `[3, S, S]`, normalized.
    pub left: Tensor,
    /// Absent when the configured mode ignores the right view.
    pub right: Option<Tensor>,
    /// MOS under the configured mode, if labelled.
    pub mos: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the chosen samples into `[B, 3, S, S]` tensors.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Option<Tensor>) {
        let stack = |views: Vec<&Tensor>| {
            let e = views[0].extents().to_vec();
            let mut data = Vec::with_capacity(views.len() * views[0].numel());
            for v in &views {
                data.extend_from_slice(v.data());
            }
            Tensor::new(data, &[views.len(), e[0], e[1], e[2]]).expect("equal view extents")
        };
        let left = stack(idx.iter().map(|&i| &self.samples[i].left).collect());
        let right = idx.iter().map(|&i| self.samples[i].right.as_ref()).collect::<Option<Vec<_>>>().map(stack);
        (left, right)
    }
}

fn load_entries(manifest: &DatasetManifest, idx: &[usize], config: &ModelConfig) -> Result<Dataset, DataError> {
    let side = config.input_side as u32;
    let labels = manifest.label_map();
    let mut samples = Vec::with_capacity(idx.len());
    for &i in idx {
        let e = &manifest.entries[i];
        let (left, left_res) = load_view(&e.left_path, side)?;
        let check = |res: (u32, u32)| {
            if res != (e.width, e.height) {
                return Err(DataError::Decode {
                    path: e.left_path.clone(),
                    msg: format!("decoded {res:?}, manifest says {:?}", (e.width, e.height)),
                });
            }
            Ok(())
        };
        check(left_res)?;
        let right = if config.mode.is_stereo() {
            let (right, right_res) = load_view(&e.right_path, side)?;
            if right_res != left_res {
                return Err(DataError::ResolutionMismatch {
                    image: e.image_id.clone(),
                    left: left_res,
                    right: right_res,
                });
            }
            Some(right)
        } else {
            None
        };
        samples.push(Sample {
            image_id: e.image_id.clone(),
            scene_id: e.scene_id.clone(),
            source: e.source,
            left,
            right,
            mos: labels.get(&(e.image_id.clone(), config.mode)).copied(),
        });
    }
    Ok(Dataset { samples })
}

/// Splits the manifest and decodes both sides at `config.input_side`.
/// Right views are only read for stereo modes.
pub fn load_and_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
    config: &ModelConfig,
) -> Result<(Dataset, Dataset), DataError> {
    let split = split_manifest(manifest, spec)?;
    Ok((load_entries(manifest, &split.train, config)?, load_entries(manifest, &split.test, config)?))
}

/// Decodes every entry without splitting.
pub fn load_all(manifest: &DatasetManifest, config: &ModelConfig) -> Result<Dataset, DataError> {
    let idx: Vec<usize> = (0..manifest.entries.len()).collect();
    load_entries(manifest, &idx, config)
}
