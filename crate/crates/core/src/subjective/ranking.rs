//! Rank-weighted preference scores and questionnaire means.

use std::collections::BTreeMap;

use super::SubjectiveError;

/// How often one option was placed at each rank (1 = top).
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTally {
    pub label: String,
    pub frequencies: BTreeMap<u32, u32>,
    /// Number of participants asked; rankings may be incomplete.
    pub n: u32,
}

/// Weights 3/2/1 for ranks 1/2/3.
pub fn default_weights() -> BTreeMap<u32, f64> {
    BTreeMap::from([(1, 3.0), (2, 2.0), (3, 1.0)])
}

/// `S = Σ_rank f·w / n`.
pub fn ranking_score(tally: &RankingTally, weights: &BTreeMap<u32, f64>) -> Result<f64, SubjectiveError> {
    if tally.n == 0 {
        return Err(SubjectiveError::EmptyTally(tally.label.clone()));
    }
    let total: u32 = tally.frequencies.values().sum();
    if total > tally.n {
        return Err(SubjectiveError::TallyExceedsPanel { label: tally.label.clone(), total, n: tally.n });
    }
    let mut s = 0.0;
    for (&rank, &f) in &tally.frequencies {
        if f == 0 {
            continue;
        }
        let w = weights.get(&rank).ok_or(SubjectiveError::MissingWeight(rank))?;
        s += f as f64 * w;
    }
    Ok(s / tally.n as f64)
}

/// Arithmetic mean per question.
pub fn questionnaire_summary(responses: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<String, f64>, SubjectiveError> {
    responses
        .iter()
        .map(|(q, v)| {
            if v.is_empty() {
                Err(SubjectiveError::EmptyResponses(q.clone()))
            } else {
                Ok((q.clone(), crate::stats::mean(v)))
            }
        })
        .collect()
}
