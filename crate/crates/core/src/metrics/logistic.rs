//! Five-parameter logistic mapping fitted by Levenberg-Marquardt with multi-start.

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::correlation::pearson;
use super::MetricError;
use crate::stats::{mean, sample_std};

pub const MIN_POINTS: usize = 6;
const MAX_ITERS: usize = 500;

/// `ŷ = β₁(½ − 1/(1 + e^{β₂(y−β₃)})) + β₄y + β₅`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub beta: [f64; 5],
}

/// `1/(1 + e^t)` without overflow.
fn inv_one_plus_exp(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

impl LogisticParams {
    pub fn eval(&self, y: f64) -> f64 {
        let [b1, b2, b3, b4, b5] = self.beta;
        b1 * (0.5 - inv_one_plus_exp(b2 * (y - b3))) + b4 * y + b5
    }

    fn jacobian_row(&self, y: f64) -> [f64; 5] {
        let [b1, b2, b3, _, _] = self.beta;
        let s = inv_one_plus_exp(b2 * (y - b3));
        let ds = s * (1.0 - s);
        [0.5 - s, b1 * ds * (y - b3), -b1 * ds * b2, y, 1.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub params: LogisticParams,
    /// Root-mean-square residual of the fitted curve.
    pub rms: f64,
    /// False when no start converged within the iteration budget; `params` is then the best seen.
    pub converged: bool,
}

impl LogisticFit {
    pub fn map(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.params.eval(v)).collect()
    }
}

fn sse(p: &LogisticParams, y: &[f64], t: &[f64]) -> f64 {
    y.iter().zip(t).map(|(&a, &b)| (p.eval(a) - b).powi(2)).sum()
}

/// Damped Gauss-Newton from one start. Returns `(params, sse, converged)`.
fn levenberg_marquardt(start: LogisticParams, y: &[f64], t: &[f64]) -> (LogisticParams, f64, bool) {
    let mut p = start;
    let mut cost = sse(&p, y, t);
    if !cost.is_finite() {
        return (p, f64::INFINITY, false);
    }
    let mut lambda = 1e-3;
    let scale = t.iter().map(|v| v * v).sum::<f64>().max(1.0);
    for _ in 0..MAX_ITERS {
        if cost <= 1e-28 * scale {
            return (p, cost, true);
        }
        let mut jtj = Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        for (&yi, &ti) in y.iter().zip(t) {
            let j = Vector5::from(p.jacobian_row(yi));
            let r = ti - p.eval(yi);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let floor = 1e-12 * jtj.diagonal().max().max(1e-300);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..5 {
                a[(k, k)] += lambda * (jtj[(k, k)] + floor);
            }
            let step = match a.cholesky() {
                Some(c) => c.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut cand = p;
            for k in 0..5 {
                cand.beta[k] += step[k];
            }
            let c = sse(&cand, y, t);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel < 1e-14 || step.norm() < 1e-14 * (1.0 + Vector5::from(p.beta).norm()) {
                    return (p, cost, true);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at any damping
            return (p, cost, true);
        }
    }
    (p, cost, false)
}

fn least_squares_line(y: &[f64], t: &[f64]) -> (f64, f64) {
    let a = DMatrix::from_fn(y.len(), 2, |i, k| if k == 0 { y[i] } else { 1.0 });
    let b = DVector::from_column_slice(t);
    match a.svd(true, true).solve(&b, 1e-12) {
        Ok(s) => (s[0], s[1]),
        Err(_) => (0.0, mean(t)),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fits the logistic mapping from predictions `y` to subjective scores `mos`.
pub fn fit_logistic(y: &[f64], mos: &[f64]) -> Result<LogisticFit, MetricError> {
    if y.len() != mos.len() {
        return Err(MetricError::LengthMismatch(y.len(), mos.len()));
    }
    if y.len() < MIN_POINTS {
        return Err(MetricError::TooShort { len: y.len(), need: MIN_POINTS });
    }
    if y.iter().chain(mos).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) =
        (mos.iter().cloned().fold(f64::INFINITY, f64::min), mos.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let range = (hi - lo).max(1e-12);
    let sd = sample_std(y).max(1e-12);
    let (slope, intercept) = least_squares_line(y, mos);

    let median = quantile(&sorted, 0.5);
    let mut starts = vec![LogisticParams { beta: [0.0, 1.0 / sd, median, slope, intercept] }];
    for &q in &[0.5, 0.25, 0.75] {
        for &f in &[1.0, 4.0, 16.0] {
            starts.push(LogisticParams { beta: [range, f / sd, quantile(&sorted, q), 0.0, mean(mos)] });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..5 {
        let j = |rng: &mut ChaCha8Rng| 1.0 + rng.random_range(-0.3..0.3);
        starts.push(LogisticParams {
            beta: [
                range * j(&mut rng),
                j(&mut rng) / sd,
                median + rng.random_range(-0.5..0.5) * sd,
                slope * rng.random_range(0.0..0.5),
                mean(mos),
            ],
        });
    }

    let mut best: Option<(LogisticParams, f64, bool)> = None;
    let mut any_converged = false;
    for s in starts {
        let (p, c, ok) = levenberg_marquardt(s, y, mos);
        any_converged |= ok;
        if best.as_ref().is_none_or(|b| c < b.1) {
            best = Some((p, c, ok));
        }
    }
    let (params, cost, _) = best.expect("at least one start");
    if !any_converged {
        log::warn!("logistic fit did not converge; using best iterate");
    }
    Ok(LogisticFit { params, rms: (cost / y.len() as f64).sqrt(), converged: any_converged })
}

/// Pearson correlation between logistic-mapped predictions and `mos`.
pub fn plcc(y: &[f64], mos: &[f64]) -> Result<f64, MetricError> {
    let fit = fit_logistic(y, mos)?;
    pearson(&fit.map(y), mos)
}
