//! Two-sample Wilcoxon rank-sum test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::stats::{mid_ranks, tie_groups};

/// Samples up to this size (both groups) use the exact permutation distribution.
pub const EXACT_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSumTest {
    /// Rank sum of the first sample under mid-ranks.
    pub w: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Two-sided rank-sum test of `x` against `y`. Ties get mid-ranks; the exact
/// branch enumerates the conditional null over the observed tie pattern.
pub fn rank_sum_test(x: &[f64], y: &[f64]) -> RankSumTest {
    let (n1, n2) = (x.len(), y.len());
    assert!(n1 > 0 && n2 > 0, "rank-sum test needs two non-empty samples");
    let combined: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = mid_ranks(&combined);
    let w: f64 = ranks[..n1].iter().sum();
    if n1.max(n2) <= EXACT_LIMIT {
        RankSumTest { w, p: exact_p(&ranks, n1, w), exact: true }
    } else {
        RankSumTest { w, p: normal_p(&combined, n1, n2, w), exact: false }
    }
}

/// Counts subsets of size `n1` by doubled rank sum.
fn exact_p(ranks: &[f64], n1: usize, w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let total: f64 = ways[n1].iter().sum();
    let n = ranks.len() as f64;
    let centre2 = n1 as f64 * (n + 1.0);
    let observed = (2.0 * w - centre2).abs();
    let extreme: f64 = ways[n1]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - centre2).abs() >= observed - 1e-9)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).min(1.0)
}

fn normal_p(combined: &[f64], n1: usize, n2: usize, w: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let (a, b) = (n1 as f64, n2 as f64);
    let ties: f64 = tie_groups(combined).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = a * b / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((w - a * (n + 1.0) / 2.0).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let std = Normal::standard();
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}
