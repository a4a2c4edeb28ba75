//! Parameterized building blocks over [`ParamStore`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamId, ParamKind, ParamStore};
use crate::tensor::{Result, Tensor};

/// Per-call state: train/eval switch and the dropout RNG.
pub struct ForwardCtx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self { train: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn train(seed: u64) -> Self {
        Self { train: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize, kind: ParamKind) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: init.uniform(&format!("{name}.weight"), kind, &[fan_out, fan_in], bound),
            bias: init.constant(&format!("{name}.bias"), ParamKind::Bias, &[fan_out], 0.0),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.linear(ps.get(self.weight), Some(ps.get(self.bias)))
    }

    pub fn zero(&self, ps: &mut ParamStore) {
        zero_param(ps, self.weight);
        zero_param(ps, self.bias);
    }
}

pub(crate) fn zero_param(ps: &mut ParamStore, id: ParamId) {
    let n = ps.get(id).numel();
    ps.set_data(id, vec![0.0; n]);
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        Self {
            gamma: init.constant(&format!("{name}.weight"), ParamKind::Norm, &[channels], 1.0),
            beta: init.constant(&format!("{name}.bias"), ParamKind::Norm, &[channels], 0.0),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(ps.get(self.gamma), ps.get(self.beta))
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Self {
            weight: init.uniform(&format!("{name}.weight"), ParamKind::Conv, &[cout, cin, k, k], bound),
            bias: init.constant(&format!("{name}.bias"), ParamKind::Bias, &[cout], 0.0),
            stride,
            pad,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.conv2d(ps.get(self.weight), Some(ps.get(self.bias)), self.stride, self.pad)
    }
}

/// Depthwise 3×3 convolution over a token grid.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        let bound = 1.0 / 3.0;
        Self {
            weight: init.uniform(&format!("{name}.weight"), ParamKind::Conv, &[channels, 3, 3], bound),
            bias: init.constant(&format!("{name}.bias"), ParamKind::Bias, &[channels], 0.0),
        }
    }

    /// `x` in token layout `[B, H·W, C]`.
    pub fn forward_tokens(&self, ps: &ParamStore, x: &Tensor, side: usize) -> Result<Tensor> {
        let grid = tokens_to_grid(x, side)?;
        let y = grid.depthwise_conv2d(ps.get(self.weight), Some(ps.get(self.bias)))?;
        grid_to_tokens(&y)
    }

    pub fn zero(&self, ps: &mut ParamStore) {
        zero_param(ps, self.weight);
        zero_param(ps, self.bias);
    }

    /// Kernel with a unit centre tap: the convolution becomes the identity.
    pub fn set_identity(&self, ps: &mut ParamStore) {
        let c = ps.get(self.weight).extents()[0];
        let mut w = vec![0.0; c * 9];
        for ch in 0..c {
            w[ch * 9 + 4] = 1.0;
        }
        ps.set_data(self.weight, w);
        zero_param(ps, self.bias);
    }
}

/// `[B, H·W, C]` → `[B, C, H, W]`.
pub fn tokens_to_grid(x: &Tensor, side: usize) -> Result<Tensor> {
    let e = x.extents();
    let (b, l, c) = (e[0], e[1], e[2]);
    debug_assert_eq!(l, side * side);
    x.reshape(&[b, side, l / side, c])?.permute(&[0, 3, 1, 2])
}

/// `[B, C, H, W]` → `[B, H·W, C]`.
pub fn grid_to_tokens(x: &Tensor) -> Result<Tensor> {
    let e = x.extents();
    let (b, c, h, w) = (e[0], e[1], e[2], e[3]);
    x.permute(&[0, 2, 3, 1])?.reshape(&[b, h * w, c])
}

/// Affine → SiLU → affine with a 4× hidden expansion.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, channels: usize, expansion: usize) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), channels, channels * expansion, ParamKind::ChannelAffine),
            fc2: Linear::new(init, &format!("{name}.fc2"), channels * expansion, channels, ParamKind::ChannelAffine),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(ps, &self.fc1.forward(ps, x)?.silu())
    }
}
