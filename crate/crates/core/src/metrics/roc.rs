//! Pair classification and the two ROC analyses with bootstrap significance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricError;
use crate::stats::{mean, mid_ranks};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairClass {
    Similar,
    /// The first image of the pair is significantly better.
    Better,
    /// The first image of the pair is significantly worse.
    Worse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub a: usize,
    pub b: usize,
    pub class: PairClass,
    pub p_value: f64,
}

/// Two-sided Welch t-test p-value.
pub fn welch_p(x: &[f64], y: &[f64]) -> f64 {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (m1, m2) = (mean(x), mean(y));
    let v1 = x.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / (n1 - 1.0);
    let v2 = y.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / (n2 - 1.0);
    let se2 = v1 / n1 + v2 / n2;
    if se2 == 0.0 {
        return if m1 == m2 { 1.0 } else { 0.0 };
    }
    let t = (m1 - m2) / se2.sqrt();
    let df = se2 * se2 / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

fn same_multiset(x: &[f64], y: &[f64]) -> bool {
    if x.len() != y.len() {
        return false;
    }
    let (mut a, mut b) = (x.to_vec(), y.to_vec());
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a == b
}

/// Classifies every unordered image pair `(a < b)` from per-subject scores
/// (`scores[image]` holds that image's subject scores).
pub fn significant_pairs(scores: &[Vec<f64>], alpha: f64) -> Result<Vec<ImagePair>, MetricError> {
    if scores.len() < 2 {
        return Err(MetricError::TooShort { len: scores.len(), need: 2 });
    }
    if let Some(s) = scores.iter().find(|s| s.len() < 2) {
        return Err(MetricError::TooShort { len: s.len(), need: 2 });
    }
    let mut out = Vec::with_capacity(scores.len() * (scores.len() - 1) / 2);
    for a in 0..scores.len() {
        for b in a + 1..scores.len() {
            let (x, y) = (&scores[a], &scores[b]);
            let p = if same_multiset(x, y) { 1.0 } else { welch_p(x, y) };
            let class = if p >= alpha {
                PairClass::Similar
            } else if mean(x) > mean(y) {
                PairClass::Better
            } else {
                PairClass::Worse
            };
            out.push(ImagePair { a, b, class, p_value: p });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RocKind {
    DifferentVsSimilar,
    BetterVsWorse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub kind: RocKind,
    pub auc: f64,
    /// Positive-class flag per analysed pair.
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

/// Mann-Whitney AUC: probability a positive outscores a negative, ties counted ½.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64, MetricError> {
    if labels.len() != scores.len() {
        return Err(MetricError::LengthMismatch(labels.len(), scores.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = mid_ranks(scores);
    let r: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = r - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

fn check_objective(pairs: &[ImagePair], objective: &[f64]) -> Result<(), MetricError> {
    if let Some(p) = pairs.iter().find(|p| p.a.max(p.b) >= objective.len()) {
        return Err(MetricError::LengthMismatch(p.a.max(p.b) + 1, objective.len()));
    }
    Ok(())
}

/// Separates significantly different pairs from similar ones by `|Δ objective|`.
pub fn roc_different_vs_similar(pairs: &[ImagePair], objective: &[f64]) -> Result<RocResult, MetricError> {
    check_objective(pairs, objective)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.class != PairClass::Similar).collect();
    let scores: Vec<f64> = pairs.iter().map(|p| (objective[p.a] - objective[p.b]).abs()).collect();
    let auc = auc(&labels, &scores)?;
    Ok(RocResult { kind: RocKind::DifferentVsSimilar, auc, labels, scores })
}

/// Separates better from worse among significant pairs by the signed `Δ objective`.
pub fn roc_better_vs_worse(pairs: &[ImagePair], objective: &[f64]) -> Result<RocResult, MetricError> {
    check_objective(pairs, objective)?;
    let sig: Vec<&ImagePair> = pairs.iter().filter(|p| p.class != PairClass::Similar).collect();
    let labels: Vec<bool> = sig.iter().map(|p| p.class == PairClass::Better).collect();
    let scores: Vec<f64> = sig.iter().map(|p| objective[p.a] - objective[p.b]).collect();
    let auc = auc(&labels, &scores)?;
    Ok(RocResult { kind: RocKind::BetterVsWorse, auc, labels, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Significance {
    Better,
    Worse,
    Indistinguishable,
}

impl Significance {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Better => "1",
            Self::Worse => "-1",
            Self::Indistinguishable => "0",
        }
    }
}

/// Paired bootstrap over analysed pairs: row `i` vs column `j` is `Better`
/// when the percentile interval of `AUC_i − AUC_j` lies above zero.
pub fn auc_significance_matrix(
    results: &[RocResult],
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<Significance>>, MetricError> {
    let k = results.len();
    let mut out = vec![vec![Significance::Indistinguishable; k]; k];
    let Some(first) = results.first() else { return Ok(out) };
    for r in results {
        if r.kind != first.kind || r.labels != first.labels {
            return Err(MetricError::PairSetMismatch);
        }
    }
    if resamples == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricError::InvalidArgument(format!("resamples {resamples}, alpha {alpha}")));
    }
    let n = first.labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); k];
    let mut idx = vec![0usize; n];
    let (mut labels, mut scores) = (vec![false; n], vec![0.0; n]);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < resamples {
        attempts += 1;
        if attempts > 100 * resamples {
            return Err(MetricError::SingleClass);
        }
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        for (slot, &i) in labels.iter_mut().zip(&idx) {
            *slot = first.labels[i];
        }
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        for (m, r) in results.iter().enumerate() {
            for (slot, &i) in scores.iter_mut().zip(&idx) {
                *slot = r.scores[i];
            }
            draws[m].push(auc(&labels, &scores)?);
        }
        accepted += 1;
    }
    for i in 0..k {
        for j in i + 1..k {
            let mut diff: Vec<f64> = draws[i].iter().zip(&draws[j]).map(|(a, b)| a - b).collect();
            diff.sort_by(f64::total_cmp);
            let lo = diff[((alpha / 2.0) * (resamples - 1) as f64).floor() as usize];
            let hi = diff[((1.0 - alpha / 2.0) * (resamples - 1) as f64).ceil() as usize];
            let s = if lo > 0.0 {
                Significance::Better
            } else if hi < 0.0 {
                Significance::Worse
            } else {
                Significance::Indistinguishable
            };
            out[i][j] = s;
            out[j][i] = match s {
                Significance::Better => Significance::Worse,
                Significance::Worse => Significance::Better,
                Significance::Indistinguishable => Significance::Indistinguishable,
            };
        }
    }
    Ok(out)
}
