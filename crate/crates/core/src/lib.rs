//! Stereoscopic image quality: the state-space quality model with its tensor
//! engine, subjective score processing, metric evaluation and dataset tooling.

pub mod data;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod subjective;
pub mod tensor;

pub use data::{DataError, DatasetManifest, TrainConfig};
pub use metrics::{MethodReport, MetricError};
pub use model::{Checkpoint, DisplayMode, Esiqanet, ModelConfig, ModelError, Variant};
pub use subjective::{MosEntry, RatingRecord, SubjectiveError};
pub use tensor::{Tensor, TensorError};
