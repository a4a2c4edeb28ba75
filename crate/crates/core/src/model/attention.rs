//! Binocular fusion (cross attention) and channel-wise (transposed) attention.

use super::blocks::{merge_heads, multihead_attention, split_heads};
use super::layers::Linear;
use super::params::{Init, ParamKind, ParamStore};
use super::ModelError;
use crate::tensor::Tensor;

fn same_tokens(a: &Tensor, b: &Tensor) -> Result<(), ModelError> {
    if a.extents() != b.extents() || a.rank() != 3 {
        return Err(ModelError::Extents(format!("view features disagree: {:?} vs {:?}", a.extents(), b.extents())));
    }
    Ok(())
}

/// Left view queries, right view supplies keys and values:
/// `F = proj(softmax(Qˡ·Kʳᵀ/√d)·Vʳ) + Vˡ`.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl CrossAttention {
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

    /// Tokens `[B, L, C]` from each view; returns fused tokens of the left extents.
    pub fn forward(&self, ps: &ParamStore, left: &Tensor, right: &Tensor) -> Result<Tensor, ModelError> {
        same_tokens(left, right)?;
        let q = self.q.forward(ps, left)?;
        let k = self.k.forward(ps, right)?;
        let v = self.v.forward(ps, right)?;
        let attended = multihead_attention(&q, &k, &v, self.heads)?;
        Ok(self.proj.forward(ps, &attended)?.add(left)?)
    }

    /// Attention weights `[B·h, L, L]` (diagnostics and tests).
    pub fn attention_map(&self, ps: &ParamStore, left: &Tensor, right: &Tensor) -> Result<Tensor, ModelError> {
        same_tokens(left, right)?;
        let q = split_heads(&self.q.forward(ps, left)?, self.heads)?;
        let k = split_heads(&self.k.forward(ps, right)?, self.heads)?;
        let d = q.extents()[2] as f64;
        Ok(q.bmm(&k.transpose(1, 2)?)?.scale(1.0 / d.sqrt()).softmax(2)?)
    }
}

/// Self attention across channels: `A = softmax(Q·K/√d)` of extents `c′×c′`,
/// `F̃ = W_p·(V·A) + F`.
#[derive(Debug, Clone)]
pub struct TransposedAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl TransposedAttention {
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

    /// Channel attention map `[B·h, d, d]`; row `i` weights the channels mixed into channel `i`.
    pub fn attention_map(&self, ps: &ParamStore, f: &Tensor) -> Result<Tensor, ModelError> {
        let q = split_heads(&self.q.forward(ps, f)?, self.heads)?;
        let k = split_heads(&self.k.forward(ps, f)?, self.heads)?;
        let d = q.extents()[2] as f64;
        Ok(q.transpose(1, 2)?.bmm(&k)?.scale(1.0 / d.sqrt()).softmax(2)?)
    }

    /// Tokens `[B, L, C]` in, same extents out.
    pub fn forward(&self, ps: &ParamStore, f: &Tensor) -> Result<Tensor, ModelError> {
        if f.rank() != 3 {
            return Err(ModelError::Extents(format!("expected [B, L, C], got {:?}", f.extents())));
        }
        let batch = f.extents()[0];
        let attn = self.attention_map(ps, f)?;
        let v = split_heads(&self.v.forward(ps, f)?, self.heads)?;
        let mixed = v.bmm(&attn.transpose(1, 2)?)?;
        let mixed = merge_heads(&mixed, batch, self.heads)?;
        Ok(self.proj.forward(ps, &mixed)?.add(f)?)
    }
}
