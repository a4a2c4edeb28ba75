//! Subjective study statistics: screening, z-scores, MOS, rankings and panel-size curves.

pub mod curves;
pub mod mos;
pub mod ranking;
pub mod ratings;
pub mod screening;
pub mod synthetic;
pub mod wilcoxon;

pub use curves::{discriminability_curve, discriminability_matrix, mean_ci_curve, mean_ci_matrix, CurvePoint};
pub use mos::{
    compute_mos, mos_pipeline, read_mos, write_mos, zscore_matrix, zscore_normalize, MosEntry, ZScoreTable, MOS_HEADER,
};
pub use ranking::{default_weights, questionnaire_summary, ranking_score, RankingTally};
pub use ratings::{read_ratings, write_ratings, RatingMatrix, RatingRecord, RATINGS_HEADER};
pub use screening::{reject_outlier_subjects, screen_matrix, ScreeningReport, SubjectScreening};
pub use synthetic::{synthetic_study, SyntheticSpec, SyntheticStudy};
pub use wilcoxon::{rank_sum_test, RankSumTest};

use crate::model::DisplayMode;

#[derive(Debug, thiserror::Error)]
pub enum SubjectiveError {
    #[error("score {0} outside 1..=10")]
    ScoreOutOfRange(i64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unexpected CSV header `{0}`")]
    Header(String),
    #[error("duplicate rating by {participant} for {image} in {mode}")]
    Duplicate { participant: String, image: String, mode: DisplayMode },
    #[error("no ratings for mode {0}")]
    NoRecords(DisplayMode),
    #[error("incomplete rating matrix in {mode}: {} missing cells, first {:?}", missing.len(), missing.first())]
    Incomplete { mode: DisplayMode, missing: Vec<(String, String)> },
    #[error("panel of {found} participants; at least {need} required")]
    PanelTooSmall { found: usize, need: usize },
    #[error("participant {0} has zero score variance")]
    ZeroVariance(String),
    #[error("participant {0} not present in ratings")]
    UnknownParticipant(String),
    #[error("no subjects")]
    NoSubjects,
    #[error("no weight for rank {0}")]
    MissingWeight(u32),
    #[error("tally for {0} has no participants")]
    EmptyTally(String),
    #[error("tally for {label} counts {total} placements for {n} participants")]
    TallyExceedsPanel { label: String, total: u32, n: u32 },
    #[error("no responses for question {0}")]
    EmptyResponses(String),
    #[error("subset size {size} invalid for a panel of {panel}")]
    SubsetTooLarge { size: usize, panel: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
