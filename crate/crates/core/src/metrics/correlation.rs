use super::MetricError;
use crate::stats::{mean, mid_ranks};

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MetricError::TooShort { len: x.len(), need: 3 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    pearson_unchecked(x, y)
}

/// Spearman correlation: Pearson on mid-ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    pearson_unchecked(&mid_ranks(x), &mid_ranks(y))
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that counts inversions (pairs moved past each other).
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        sort_counting_swaps(&mut v[..mid], &mut buf[..mid]) + sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Concordant-minus-discordant count and the tie totals `(S, n0, n1, n2)`,
/// computed in O(n log n).
pub(crate) fn kendall_counts(x: &[f64], y: &[f64]) -> (i64, u64, u64, u64) {
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let n1 = tied_pairs(&xs);
    // pairs tied in both coordinates
    let mut n3 = 0u64;
    let mut run = 1u64;
    for k in 1..xs.len() {
        if xs[k] == xs[k - 1] && ys[k] == ys[k - 1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    (s, n0, n1, n2)
}

/// Kendall tau-b.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let (s, n0, n1, n2) = kendall_counts(x, y);
    if n1 == n0 || n2 == n0 {
        return Err(MetricError::Constant);
    }
    Ok(s as f64 / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[3.0, 6.0, 9.0]).unwrap(), 1.0);
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[9.0, 6.0, 3.0]).unwrap(), -1.0);
        assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(krcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 4.0 / 6.0);
        assert_eq!(krcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 8.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 7.0, 9.0]).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(MetricError::Constant)));
        assert!(matches!(krcc(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), Err(MetricError::Constant)));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(MetricError::TooShort { .. })));
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch(3, 2))));
        assert!(matches!(pearson(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]), Err(MetricError::NonFinite)));
    }

    #[test]
    fn kendall_with_ties() {
        // x ties (1,2); y ties (2,3); pairs: (0,1) tie x, (0,2) C, (0,3) C, (1,2) C, (1,3) C, (2,3) tie y
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 3.0];
        let tau = krcc(&x, &y).unwrap();
        assert!((tau - 4.0 / 5.0).abs() < 1e-15);
    }
}
