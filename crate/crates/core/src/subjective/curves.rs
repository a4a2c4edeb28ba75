//! Panel-size curves: how discriminability and confidence intervals evolve with
//! the number of participants.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mos::{zscore_matrix, Z95};
use super::ratings::{RatingMatrix, RatingRecord};
use super::wilcoxon::rank_sum_test;
use super::SubjectiveError;
use crate::model::DisplayMode;
use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub size: usize,
    pub value: f64,
}

fn check_sizes(sizes: &[usize], panel: usize, trials: usize) -> Result<(), SubjectiveError> {
    if trials == 0 {
        return Err(SubjectiveError::InvalidArgument("trials per size must be positive".into()));
    }
    for &s in sizes {
        if s == 0 || s > panel {
            return Err(SubjectiveError::SubsetTooLarge { size: s, panel });
        }
    }
    Ok(())
}

/// Fraction of image pairs whose raw scores differ at level `alpha`, for
/// random panels of each size. `scores[p][j]` is participant `p` on image `j`.
pub fn discriminability_matrix(
    scores: &[Vec<f64>],
    sizes: &[usize],
    trials: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>, SubjectiveError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SubjectiveError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    check_sizes(sizes, scores.len(), trials)?;
    let images = scores.first().map_or(0, |r| r.len());
    if images < 2 {
        return Err(SubjectiveError::InvalidArgument("need at least two images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = images * (images - 1) / 2;
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut acc = 0.0;
        for _ in 0..trials {
            let panel = sample(&mut rng, scores.len(), size).into_vec();
            let cols: Vec<Vec<f64>> = (0..images).map(|j| panel.iter().map(|&p| scores[p][j]).collect()).collect();
            let mut significant = 0usize;
            for a in 0..images {
                for b in a + 1..images {
                    if rank_sum_test(&cols[a], &cols[b]).p < alpha {
                        significant += 1;
                    }
                }
            }
            acc += significant as f64 / pairs as f64;
        }
        out.push(CurvePoint { size, value: acc / trials as f64 });
    }
    Ok(out)
}

pub fn discriminability_curve(
    records: &[RatingRecord],
    mode: DisplayMode,
    sizes: &[usize],
    trials: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>, SubjectiveError> {
    let m = RatingMatrix::from_records(records, mode)?;
    discriminability_matrix(&m.scores, sizes, trials, alpha, seed)
}

/// Mean over images of `1.96·std/√N` across random panels of each size.
/// `scores[p][j]` is the (already normalised) score of participant `p` on image `j`.
pub fn mean_ci_matrix(
    scores: &[Vec<f64>],
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, SubjectiveError> {
    check_sizes(sizes, scores.len(), trials)?;
    let images = scores.first().map_or(0, |r| r.len());
    if images == 0 {
        return Err(SubjectiveError::InvalidArgument("no images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut acc = 0.0;
        for _ in 0..trials {
            let panel = sample(&mut rng, scores.len(), size).into_vec();
            let per_image: Vec<f64> = (0..images)
                .map(|j| {
                    let col: Vec<f64> = panel.iter().map(|&p| scores[p][j]).collect();
                    Z95 * sample_std(&col) / (size as f64).sqrt()
                })
                .collect();
            acc += mean(&per_image);
        }
        out.push(CurvePoint { size, value: acc / trials as f64 });
    }
    Ok(out)
}

/// CI curve over the z′ scores of every participant in `mode`.
pub fn mean_ci_curve(
    records: &[RatingRecord],
    mode: DisplayMode,
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, SubjectiveError> {
    let table = zscore_matrix(&RatingMatrix::from_records(records, mode)?)?;
    mean_ci_matrix(&table.z_prime, sizes, trials, seed)
}
