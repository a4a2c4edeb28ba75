//! Objective metric evaluation: correlations, logistic mapping and ROC analyses.

pub mod correlation;
pub mod logistic;
pub mod report;
pub mod roc;

pub use correlation::{krcc, pearson, srcc};
pub use logistic::{fit_logistic, plcc, LogisticFit, LogisticParams};
pub use report::{format_significance_matrix, write_report, MethodReport};
pub use roc::{
    auc, auc_significance_matrix, roc_better_vs_worse, roc_different_vs_similar, significant_pairs, welch_p, ImagePair,
    PairClass, RocKind, RocResult, Significance, DEFAULT_ALPHA, DEFAULT_RESAMPLES,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{len} values; at least {need} required")]
    TooShort { len: usize, need: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("constant input: correlation undefined")]
    Constant,
    #[error("only one class present")]
    SingleClass,
    #[error("methods were evaluated on different pair sets")]
    PairSetMismatch,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
