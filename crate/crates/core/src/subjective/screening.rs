//! Kurtosis-based subject screening (ITU-R BT.500 style).

use super::ratings::{RatingMatrix, RatingRecord};
use super::SubjectiveError;
use crate::model::DisplayMode;
use crate::stats::{mean, sample_std};

pub const MIN_PANEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScreening {
    pub participant_id: String,
    /// Scores above the per-image upper limit.
    pub p: usize,
    /// Scores below the per-image lower limit.
    pub q: usize,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    pub mode: DisplayMode,
    pub retained: Vec<String>,
    pub subjects: Vec<SubjectScreening>,
}

impl ScreeningReport {
    pub fn rejected(&self) -> impl Iterator<Item = &str> {
        self.subjects.iter().filter(|s| s.rejected).map(|s| s.participant_id.as_str())
    }
}

/// Moment kurtosis `m4 / m2²`; a zero-dispersion column counts as normal.
fn kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 3.0;
    }
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

pub fn screen_matrix(m: &RatingMatrix) -> Result<ScreeningReport, SubjectiveError> {
    let n = m.participants.len();
    if n < MIN_PANEL {
        return Err(SubjectiveError::PanelTooSmall { found: n, need: MIN_PANEL });
    }
    for (p, row) in m.participants.iter().zip(&m.scores) {
        if sample_std(row) == 0.0 {
            return Err(SubjectiveError::ZeroVariance(p.clone()));
        }
    }
    let images = m.images.len();
    let mut counts = vec![(0usize, 0usize); n];
    for j in 0..images {
        let col = m.image_column(j);
        let mu = mean(&col);
        let sd = sample_std(&col);
        let beta2 = kurtosis(&col);
        let k = if (2.0..=4.0).contains(&beta2) { 2.0 } else { 20f64.sqrt() };
        for (c, &s) in counts.iter_mut().zip(&col) {
            if s > mu + k * sd {
                c.0 += 1;
            } else if s < mu - k * sd {
                c.1 += 1;
            }
        }
    }
    let subjects: Vec<SubjectScreening> = m
        .participants
        .iter()
        .zip(counts)
        .map(|(pid, (p, q))| {
            let total = (p + q) as f64;
            let rejected = total / images as f64 > 0.05 && (p as f64 - q as f64).abs() / total < 0.3;
            SubjectScreening { participant_id: pid.clone(), p, q, rejected }
        })
        .collect();
    let retained = subjects.iter().filter(|s| !s.rejected).map(|s| s.participant_id.clone()).collect();
    Ok(ScreeningReport { mode: m.mode, retained, subjects })
}

pub fn reject_outlier_subjects(
    records: &[RatingRecord],
    mode: DisplayMode,
) -> Result<ScreeningReport, SubjectiveError> {
    screen_matrix(&RatingMatrix::from_records(records, mode)?)
}
