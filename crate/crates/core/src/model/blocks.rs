//! Backbone blocks: non-causal SSD mixer, VSSD block and MSA block.
//!
//! All blocks take and return tokens in `[B, H·W, C]` layout.

use super::layers::{DepthwiseConv, FeedForward, ForwardCtx, LayerNorm, Linear};
use super::params::{Init, ParamId, ParamKind, ParamStore};
use super::ssd::noncausal_scan;
use super::ModelError;
use crate::model::config::FFN_EXPANSION;
use crate::tensor::{Result as TensorResult, Tensor};

fn check_tokens(x: &Tensor, side: usize, channels: usize) -> Result<(usize, usize), ModelError> {
    let e = x.extents();
    if e.len() != 3 || e[2] != channels {
        return Err(ModelError::Extents(format!("expected [B, L, {channels}] tokens, got {e:?}")));
    }
    if side == 0 || e[1] != side * side {
        return Err(ModelError::Extents(format!("{} tokens do not form a {side}×{side} grid", e[1])));
    }
    Ok((e[0], e[1]))
}

/// Splits `[B, L, h·d]` into `[B·h, L, d]`.
pub(crate) fn split_heads(x: &Tensor, heads: usize) -> TensorResult<Tensor> {
    let e = x.extents();
    let (b, l, c) = (e[0], e[1], e[2]);
    let d = c / heads;
    x.reshape(&[b, l, heads, d])?.permute(&[0, 2, 1, 3])?.reshape(&[b * heads, l, d])
}

/// Inverse of [`split_heads`].
pub(crate) fn merge_heads(x: &Tensor, batch: usize, heads: usize) -> TensorResult<Tensor> {
    let e = x.extents();
    let (l, d) = (e[1], e[2]);
    x.reshape(&[batch, heads, l, d])?.permute(&[0, 2, 1, 3])?.reshape(&[batch, l, heads * d])
}

/// Non-causal SSD token mixer.
///
/// Learned affine maps give the value path `x`, the gate path `z`, per-head
/// `B` and `C` (state size equal to head width) and the raw step `Δ`. The value
/// path passes a depthwise 3×3 convolution over the token grid and SiLU.
#[derive(Debug, Clone)]
pub struct NcSsd {
    pub x_proj: Linear,
    pub z_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub conv: DepthwiseConv,
    pub out_proj: Linear,
    pub heads: usize,
    pub channels: usize,
}

impl NcSsd {
    pub fn new(init: &mut Init, name: &str, channels: usize, heads: usize) -> Self {
        let ca = ParamKind::ChannelAffine;
        let dt_proj = Linear::new(init, &format!("{name}.dt_proj"), channels, heads, ParamKind::GateAffine);
        // step sizes start log-uniform in [1e-3, 1e-1]
        let dt_bias: Vec<f64> = (0..heads)
            .map(|_| {
                let dt = (init.sample(1e-3f64.ln(), 1e-1f64.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        init.store.set_data(dt_proj.bias, dt_bias);
        let a_log = (1..=heads).map(|h| (h as f64).ln()).collect();
        Self {
            x_proj: Linear::new(init, &format!("{name}.x_proj"), channels, channels, ca),
            z_proj: Linear::new(init, &format!("{name}.z_proj"), channels, channels, ca),
            b_proj: Linear::new(init, &format!("{name}.b_proj"), channels, channels, ca),
            c_proj: Linear::new(init, &format!("{name}.c_proj"), channels, channels, ca),
            dt_proj,
            a_log: init.values(&format!("{name}.a_log"), ParamKind::Scalar, &[heads], a_log),
            conv: DepthwiseConv::new(init, &format!("{name}.conv"), channels),
            out_proj: Linear::new(init, &format!("{name}.out_proj"), channels, channels, ca),
            heads,
            channels,
        }
    }

    /// Step sizes `Δ = softplus(·)` and gates `a = exp(−exp(a_log)·Δ)`, both `[B·h, L]`.
    pub fn gates(&self, ps: &ParamStore, x: &Tensor) -> TensorResult<(Tensor, Tensor)> {
        let e = x.extents();
        let (b, l) = (e[0], e[1]);
        let h = self.heads;
        let delta = self.dt_proj.forward(ps, x)?.softplus();
        let rate = ps.get(self.a_log).exp();
        let gate = delta.mul(&rate)?.scale(-1.0).exp();
        let to_heads = |t: Tensor| t.permute(&[0, 2, 1])?.reshape(&[b * h, l]);
        Ok((to_heads(gate)?, to_heads(delta)?))
    }

    /// Mixer on already-normalized tokens; `side` is the token grid side.
    pub fn forward(&self, ps: &ParamStore, x: &Tensor, side: usize) -> Result<Tensor, ModelError> {
        let (batch, _) = check_tokens(x, side, self.channels)?;
        let h = self.heads;
        let value = self.x_proj.forward(ps, x)?;
        let value = self.conv.forward_tokens(ps, &value, side)?.silu();
        let z = self.z_proj.forward(ps, x)?;
        let bm = split_heads(&self.b_proj.forward(ps, x)?, h)?;
        let cm = split_heads(&self.c_proj.forward(ps, x)?, h)?;
        let (gate, delta) = self.gates(ps, x)?;
        let y = noncausal_scan(&split_heads(&value, h)?, &gate, &delta, &bm, &cm)?;
        let y = merge_heads(&y, batch, h)?.mul(&z.silu())?;
        Ok(self.out_proj.forward(ps, &y)?)
    }
}

/// `X + DWConv3×3(X)`.
#[derive(Debug, Clone)]
pub struct LocalPerception {
    pub conv: DepthwiseConv,
}

impl LocalPerception {
    pub fn forward(&self, ps: &ParamStore, x: &Tensor, side: usize) -> TensorResult<Tensor> {
        x.add(&self.conv.forward_tokens(ps, x, side)?)
    }
}

#[derive(Debug, Clone)]
pub struct VssdBlock {
    pub lpu1: LocalPerception,
    pub norm1: LayerNorm,
    pub mixer: NcSsd,
    pub lpu2: LocalPerception,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

impl VssdBlock {
    pub fn new(init: &mut Init, name: &str, channels: usize, heads: usize) -> Self {
        Self {
            lpu1: LocalPerception { conv: DepthwiseConv::new(init, &format!("{name}.lpu1"), channels) },
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), channels),
            mixer: NcSsd::new(init, &format!("{name}.mixer"), channels, heads),
            lpu2: LocalPerception { conv: DepthwiseConv::new(init, &format!("{name}.lpu2"), channels) },
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), channels),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), channels, FFN_EXPANSION),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor, side: usize) -> Result<Tensor, ModelError> {
        check_tokens(x, side, self.mixer.channels)?;
        let x = self.lpu1.forward(ps, x, side)?;
        let x = x.add(&self.mixer.forward(ps, &self.norm1.forward(ps, &x)?, side)?)?;
        let x = self.lpu2.forward(ps, &x, side)?;
        Ok(x.add(&self.ffn.forward(ps, &self.norm2.forward(ps, &x)?)?)?)
    }

    /// Zeroes the mixer and FFN output projections.
    pub fn zero_outputs(&self, ps: &mut ParamStore) {
        self.mixer.out_proj.zero(ps);
        self.ffn.fc2.zero(ps);
    }

    pub fn zero_local_perception(&self, ps: &mut ParamStore) {
        self.lpu1.conv.zero(ps);
        self.lpu2.conv.zero(ps);
    }
}

/// Multi-head scaled dot-product attention of `q` over `k`/`v`, all `[B, L, C]`.
pub fn multihead_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> TensorResult<Tensor> {
    let batch = q.extents()[0];
    let d = q.extents()[2] / heads;
    let (qh, kh, vh) = (split_heads(q, heads)?, split_heads(k, heads)?, split_heads(v, heads)?);
    let scores = qh.bmm(&kh.transpose(1, 2)?)?.scale(1.0 / (d as f64).sqrt());
    let attn = scores.softmax(2)?;
    merge_heads(&attn.bmm(&vh)?, batch, heads)
}

#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(init: &mut Init, name: &str, channels: usize, heads: usize) -> Self {
        let ca = ParamKind::ChannelAffine;
        Self {
            q: Linear::new(init, &format!("{name}.q"), channels, channels, ca),
            k: Linear::new(init, &format!("{name}.k"), channels, channels, ca),
            v: Linear::new(init, &format!("{name}.v"), channels, channels, ca),
            proj: Linear::new(init, &format!("{name}.proj"), channels, channels, ca),
            heads,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> TensorResult<Tensor> {
        let (q, k, v) = (self.q.forward(ps, x)?, self.k.forward(ps, x)?, self.v.forward(ps, x)?);
        self.proj.forward(ps, &multihead_attention(&q, &k, &v, self.heads)?)
    }
}

/// Pre-norm transformer block used in the last stage.
#[derive(Debug, Clone)]
pub struct MsaBlock {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub channels: usize,
}

impl MsaBlock {
    pub fn new(init: &mut Init, name: &str, channels: usize, heads: usize) -> Result<Self, ModelError> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(ModelError::Config(format!("{channels} channels not divisible by {heads} heads")));
        }
        Ok(Self {
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), channels),
            attn: SelfAttention::new(init, &format!("{name}.attn"), channels, heads),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), channels),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), channels, FFN_EXPANSION),
            channels,
        })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor, ModelError> {
        let e = x.extents();
        if e.len() != 3 || e[2] != self.channels {
            return Err(ModelError::Extents(format!("expected [B, L, {}] tokens, got {e:?}", self.channels)));
        }
        let x = x.add(&self.attn.forward(ps, &self.norm1.forward(ps, x)?)?)?;
        Ok(x.add(&self.ffn.forward(ps, &self.norm2.forward(ps, &x)?)?)?)
    }

    pub fn zero_outputs(&self, ps: &mut ParamStore) {
        self.attn.proj.zero(ps);
        self.ffn.fc2.zero(ps);
    }
}

/// A stage body: either VSSD or MSA blocks.
#[derive(Debug, Clone)]
pub enum StageBlock {
    Vssd(VssdBlock),
    Msa(MsaBlock),
}

impl StageBlock {
    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Tensor,
        side: usize,
        _ctx: &mut ForwardCtx,
    ) -> Result<Tensor, ModelError> {
        match self {
            StageBlock::Vssd(b) => b.forward(ps, x, side),
            StageBlock::Msa(b) => b.forward(ps, x),
        }
    }

    pub fn zero_outputs(&self, ps: &mut ParamStore) {
        match self {
            StageBlock::Vssd(b) => b.zero_outputs(ps),
            StageBlock::Msa(b) => b.zero_outputs(ps),
        }
    }
}
