//! Dataset ingestion, training and evaluation orchestration, low-level
//! feature statistics and MOS distribution reports.

pub mod evaluate;
pub mod features;
pub mod images;
pub mod manifest;
pub mod reports;
pub mod split;
pub mod synthetic;
pub mod train;

use std::path::PathBuf;

use crate::metrics::MetricError;
use crate::model::{DisplayMode, ModelError};
use crate::subjective::SubjectiveError;

pub use evaluate::{evaluate, write_predictions, Evaluation, Prediction};
pub use features::{
    feature_table, image_features, kde_series, low_level_features, write_feature_table, write_kde, FeatureTable,
    LowLevelFeatures, FEATURE_NAMES,
};
pub use images::{load_view, normalize_rgb, CHANNEL_MEAN, CHANNEL_STD};
pub use manifest::{DatasetManifest, LabelEntry, ManifestEntry, Side, Source};
pub use reports::{histogram, mos_reports, write_histograms, HistogramBin, MosReports, Series};
pub use split::{check_leakage, load_all, load_and_split, split_manifest, Dataset, Sample, Split, SplitSpec};
pub use synthetic::{synthetic_dataset, write_synthetic_dataset};
pub use train::{train, write_loss_trace, LossPoint, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("cannot decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("{image}: left view {left:?} and right view {right:?} differ in resolution")]
    ResolutionMismatch { image: String, left: (u32, u32), right: (u32, u32) },
    #[error("scene `{0}` appears on both sides of the split")]
    Leakage(String),
    #[error("no {mode} label for image `{image}`")]
    MissingLabel { image: String, mode: DisplayMode },
    #[error("checkpoint was trained for {trained}, evaluation requested {requested}")]
    ModeMismatch { trained: DisplayMode, requested: DisplayMode },
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("non-finite loss at step {step}; offending batch written to {dump}")]
    NonFiniteLoss { step: usize, dump: PathBuf },
    #[error("no captured image for scene `{scene}` of synthesized image `{image}`")]
    UnmatchedScene { scene: String, image: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Subjective(#[from] SubjectiveError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
