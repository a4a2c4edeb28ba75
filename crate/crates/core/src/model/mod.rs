//! Stereo image quality network and its building blocks.

pub mod attention;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod heatmap;
pub mod layers;
pub mod net;
pub mod optim;
pub mod params;
pub mod ssd;

pub use attention::{CrossAttention, TransposedAttention};
pub use blocks::{MsaBlock, NcSsd, StageBlock, VssdBlock};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{DisplayMode, ModelConfig, Variant};
pub use heatmap::{stage_heatmap, Heatmap};
pub use layers::ForwardCtx;
pub use net::{Esiqanet, ParamReport, StageFeatures};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamKind, ParamStore};
pub use ssd::{noncausal_scan, ssd_dual, ssd_recurrent, SsdParams};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("extent mismatch: {0}")]
    Extents(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("right view required in stereo display modes")]
    MissingRightView,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
