//! State-space duality kernels.
//!
//! [`ssd_recurrent`] and [`ssd_dual`] compute the same causal scan on one head
//! with plain `f64` buffers: the first as a linear recurrence over a hidden
//! state, the second as a masked token-by-token interaction matrix. They are
//! used as mutual oracles. [`noncausal_scan`] is the differentiable
//! position-independent variant used inside the vision blocks.

use super::ModelError;
use crate::tensor::{Result as TensorResult, Tensor};

/// Per-token parameters of one head.
///
/// `a` and `delta` have one entry per token; `b` and `c` are `[tokens, state]`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: Vec<f64>,
    pub state: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl SsdParams {
    /// Maps unconstrained values onto valid parameters: `Δ = softplus(raw)`,
    /// `a = exp(−exp(a_log)·Δ)` so that `a ∈ (0, 1]`.
    pub fn from_raw(
        a_log: &[f64],
        delta_raw: &[f64],
        b: Vec<f64>,
        c: Vec<f64>,
        state: usize,
    ) -> Result<Self, ModelError> {
        if a_log.len() != delta_raw.len() {
            return Err(ModelError::Extents(format!("a has {} tokens, delta has {}", a_log.len(), delta_raw.len())));
        }
        let delta: Vec<f64> = delta_raw.iter().map(|&d| softplus(d)).collect();
        let a = a_log.iter().zip(&delta).map(|(&al, &d)| (-al.exp() * d).exp()).collect();
        let p = SsdParams { a, b, c, delta, state };
        p.tokens()?;
        Ok(p)
    }

    /// Token count, after checking that every field agrees on it.
    pub fn tokens(&self) -> Result<usize, ModelError> {
        let l = self.a.len();
        let bad = self.delta.len() != l
            || self.state == 0
            || self.b.len() != l * self.state
            || self.c.len() != l * self.state;
        if bad || l == 0 {
            return Err(ModelError::Extents(format!(
                "tokens {l}: delta {}, b {}, c {}, state {}",
                self.delta.len(),
                self.b.len(),
                self.c.len(),
                self.state
            )));
        }
        Ok(l)
    }
}

fn check_x(x: &[f64], width: usize, tokens: usize) -> Result<(), ModelError> {
    if width == 0 || x.len() != tokens * width {
        return Err(ModelError::Extents(format!("x has {} values, expected {tokens} tokens × {width}", x.len())));
    }
    Ok(())
}

/// `h_t = a_t·h_{t−1} + B_t·(Δ_t·x_t)`, `y_t = C_t·h_t`, `h_0 = 0`.
///
/// `x` is `[tokens, width]`; the hidden state is `[state, width]`.
pub fn ssd_recurrent(x: &[f64], width: usize, p: &SsdParams) -> Result<Vec<f64>, ModelError> {
    let l = p.tokens()?;
    check_x(x, width, l)?;
    let n = p.state;
    let mut h = vec![0.0; n * width];
    let mut y = vec![0.0; l * width];
    for t in 0..l {
        let xt = &x[t * width..(t + 1) * width];
        for s in 0..n {
            let bs = p.b[t * n + s] * p.delta[t];
            let row = &mut h[s * width..(s + 1) * width];
            for (hv, xv) in row.iter_mut().zip(xt) {
                *hv = p.a[t] * *hv + bs * xv;
            }
        }
        let yt = &mut y[t * width..(t + 1) * width];
        for s in 0..n {
            let cs = p.c[t * n + s];
            for (yv, hv) in yt.iter_mut().zip(&h[s * width..(s + 1) * width]) {
                *yv += cs * hv;
            }
        }
    }
    Ok(y)
}

/// The masked interaction matrix `M[t,s] = (C_t·B_s)·Π_{r=s+1..t} a_r·Δ_s` for `s ≤ t`.
pub fn ssd_interaction_matrix(p: &SsdParams) -> Result<Vec<f64>, ModelError> {
    let l = p.tokens()?;
    let n = p.state;
    let mut m = vec![0.0; l * l];
    for t in 0..l {
        let ct = &p.c[t * n..(t + 1) * n];
        let mut decay = 1.0;
        for s in (0..=t).rev() {
            let bs = &p.b[s * n..(s + 1) * n];
            let cb: f64 = ct.iter().zip(bs).map(|(a, b)| a * b).sum();
            m[t * l + s] = cb * decay * p.delta[s];
            decay *= p.a[s];
        }
    }
    Ok(m)
}

/// Quadratic (attention-like) form of [`ssd_recurrent`]: `y = M·x`.
pub fn ssd_dual(x: &[f64], width: usize, p: &SsdParams) -> Result<Vec<f64>, ModelError> {
    let l = p.tokens()?;
    check_x(x, width, l)?;
    let m = ssd_interaction_matrix(p)?;
    let mut y = vec![0.0; l * width];
    for t in 0..l {
        let yt = &mut y[t * width..(t + 1) * width];
        for s in 0..=t {
            let w = m[t * l + s];
            if w == 0.0 {
                continue;
            }
            for (yv, xv) in yt.iter_mut().zip(&x[s * width..(s + 1) * width]) {
                *yv += w * xv;
            }
        }
    }
    Ok(y)
}

/// Non-causal scan with a global state shared by all tokens.
///
/// Shapes: `x` `[G, L, P]`, `gate` and `delta` `[G, L]`, `b` and `c` `[G, L, N]`,
/// where `G` folds batch and heads. Computes `H = Σ_t gate_t·Δ_t·x_tᵀ·B_t`
/// (`[G, P, N]`) and `y_t = H·C_t`.
pub fn noncausal_scan(x: &Tensor, gate: &Tensor, delta: &Tensor, b: &Tensor, c: &Tensor) -> TensorResult<Tensor> {
    let ex = x.extents();
    let (g, l) = (ex[0], ex[1]);
    let weight = gate.mul(delta)?.reshape(&[g, l, 1])?;
    let xw = x.mul(&weight)?;
    let state = xw.transpose(1, 2)?.bmm(b)?;
    c.bmm(&state.transpose(1, 2)?)
}
