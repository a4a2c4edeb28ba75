//! Finite-difference checks for composite blocks and the full network.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{CrossAttention, TransposedAttention};
use super::blocks::{MsaBlock, VssdBlock};
use super::config::ModelConfig;
use super::layers::ForwardCtx;
use super::net::Esiqanet;
use super::params::{Init, ParamStore};
use super::ModelError;
use crate::tensor::{backward, no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composite {
    Vssd,
    Msa,
    CrossAttention,
    TransposedAttention,
}

impl Composite {
    pub const ALL: [Composite; 4] = [Self::Vssd, Self::Msa, Self::CrossAttention, Self::TransposedAttention];

    pub fn name(self) -> &'static str {
        match self {
            Self::Vssd => "vssd_block",
            Self::Msa => "msa_block",
            Self::CrossAttention => "cross_attention",
            Self::TransposedAttention => "transposed_attention",
        }
    }
}

/// Outcome of one check over a set of sampled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub coords: usize,
    /// Coordinates whose relative error is within the tolerance.
    pub within: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn fraction_within(&self) -> f64 {
        self.within as f64 / self.coords.max(1) as f64
    }
}

/// Lower bound of the magnitude below which gradients are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-7;

fn coordinate_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

enum Coord {
    Input(usize, usize),
    Param(usize, usize),
}

/// Compares backprop against central differences of `Σ f(ps, inputs) ⊙ w`.
/// Every input coordinate is checked plus `param_coords` sampled parameter coordinates.
fn check<F>(
    ps: &ParamStore,
    inputs: &[Tensor],
    f: F,
    param_coords: usize,
    input_coords: Option<usize>,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradReport, ModelError>
where
    F: Fn(&ParamStore, &[Tensor]) -> Result<Tensor, ModelError>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.to_param()).collect();
    let out = f(ps, &leaves)?;
    let w = Tensor::randn(out.extents(), 1.0, rng);
    let grads = backward(&out.mul(&w)?.sum())?;

    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        match input_coords {
            None => coords.extend((0..t.numel()).map(|j| Coord::Input(i, j))),
            Some(k) => coords.extend(sample(rng, t.numel(), k.min(t.numel())).into_iter().map(|j| Coord::Input(i, j))),
        }
    }
    let sizes: Vec<usize> = ps.entries().iter().map(|e| e.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    for flat in sample(rng, total, param_coords.min(total)) {
        let (mut p, mut j) = (0, flat);
        while j >= sizes[p] {
            j -= sizes[p];
            p += 1;
        }
        coords.push(Coord::Param(p, j));
    }

    let eps = 1e-5;
    let objective = |ps: &ParamStore, xs: &[Tensor]| -> Result<f64, ModelError> {
        no_grad(|| -> Result<f64, ModelError> { Ok(f(ps, xs)?.mul(&w)?.sum().item()) })
    };
    // central differences carry roughly ε·|f|/h of cancellation noise; gradients
    // below noise/tol cannot be resolved to `tol` and are compared absolutely
    let f0 = objective(ps, inputs)?;
    let floor = GRAD_FLOOR.max(4.0 * f64::EPSILON * (f0.abs() + 1.0) / (eps * tol));
    let ids: Vec<_> = ps.ids().collect();
    let mut report = GradReport { coords: coords.len(), within: 0, max_rel: 0.0 };
    for c in coords {
        let (analytic, numeric) = match c {
            Coord::Input(i, j) => {
                let a = grads.get(&leaves[i]).map_or(0.0, |g| g.data()[j]);
                let probe = |d: f64| -> Result<f64, ModelError> {
                    let mut xs = inputs.to_vec();
                    let mut data = xs[i].data().to_vec();
                    data[j] += d;
                    xs[i] = Tensor::new(data, xs[i].extents())?;
                    objective(ps, &xs)
                };
                (a, (probe(eps)? - probe(-eps)?) / (2.0 * eps))
            }
            Coord::Param(p, j) => {
                let id = ids[p];
                let a = grads.get(ps.get(id)).map_or(0.0, |g| g.data()[j]);
                let probe = |d: f64| -> Result<f64, ModelError> {
                    let mut local = ps.clone();
                    let mut data = local.get(id).data().to_vec();
                    data[j] += d;
                    local.set_data(id, data);
                    objective(&local, inputs)
                };
                (a, (probe(eps)? - probe(-eps)?) / (2.0 * eps))
            }
        };
        let e = coordinate_error(analytic, numeric, floor);
        report.max_rel = report.max_rel.max(e);
        if e <= tol {
            report.within += 1;
        }
    }
    Ok(report)
}

/// One random trial of `kind` on a `2 × 9 × 8` token input.
pub fn check_composite(kind: Composite, seed: u64, tol: f64) -> Result<GradReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut init = Init { store: &mut ps, rng: &mut init_rng };
    let (b, side, c) = (2, 3, 8);
    let x = Tensor::randn(&[b, side * side, c], 1.0, &mut rng);
    let param_coords = 48;
    match kind {
        Composite::Vssd => {
            let block = VssdBlock::new(&mut init, "b", c, 2);
            check(&ps, &[x], |ps, xs| block.forward(ps, &xs[0], side), param_coords, None, tol, &mut rng)
        }
        Composite::Msa => {
            let block = MsaBlock::new(&mut init, "b", c, 2)?;
            check(&ps, &[x], |ps, xs| block.forward(ps, &xs[0]), param_coords, None, tol, &mut rng)
        }
        Composite::CrossAttention => {
            let block = CrossAttention::new(&mut init, "b", c, 2);
            let r = Tensor::randn(&[b, side * side, c], 1.0, &mut rng);
            check(&ps, &[x, r], |ps, xs| block.forward(ps, &xs[0], &xs[1]), param_coords, None, tol, &mut rng)
        }
        Composite::TransposedAttention => {
            let block = TransposedAttention::new(&mut init, "b", c, 1);
            check(&ps, &[x], |ps, xs| block.forward(ps, &xs[0]), param_coords, None, tol, &mut rng)
        }
    }
}

/// One random trial of the whole network in eval mode on a single image pair.
pub fn check_network(config: &ModelConfig, seed: u64, coords: usize, tol: f64) -> Result<GradReport, ModelError> {
    let model = Esiqanet::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let s = config.input_side;
    let mut inputs = vec![Tensor::randn(&[1, 3, s, s], 1.0, &mut rng)];
    if config.mode.is_stereo() {
        inputs.push(Tensor::randn(&[1, 3, s, s], 1.0, &mut rng));
    }
    let stereo = config.mode.is_stereo();
    let forward = |ps: &ParamStore, xs: &[Tensor]| -> Result<Tensor, ModelError> {
        let mut m = model.clone();
        *m.params_mut() = ps.clone();
        m.forward(&xs[0], if stereo { xs.get(1) } else { None }, &mut ForwardCtx::eval())
    };
    let input_coords = coords / 4;
    check(model.params(), &inputs, forward, coords - input_coords, Some(input_coords), tol, &mut rng)
}
