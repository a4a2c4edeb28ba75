//! Descriptor-driven dispatch over the primitive set.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor, TensorError};

/// Names of the primitives, parseable from strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    BatchedMatMul,
    Add,
    Subtract,
    Multiply,
    Scale,
    Softmax,
    LayerNorm,
    DepthwiseConv2d,
    Linear,
    Relu,
    Silu,
    Sigmoid,
    Exp,
    Softplus,
    Mean,
    Sum,
    Concat,
    Reshape,
    Transpose,
    Dropout,
    Conv2d,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 22] = [
        Self::MatMul,
        Self::BatchedMatMul,
        Self::Add,
        Self::Subtract,
        Self::Multiply,
        Self::Scale,
        Self::Softmax,
        Self::LayerNorm,
        Self::DepthwiseConv2d,
        Self::Linear,
        Self::Relu,
        Self::Silu,
        Self::Sigmoid,
        Self::Exp,
        Self::Softplus,
        Self::Mean,
        Self::Sum,
        Self::Concat,
        Self::Reshape,
        Self::Transpose,
        Self::Dropout,
        Self::Conv2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MatMul => "matmul",
            Self::BatchedMatMul => "batched_matmul",
            Self::Add => "add",
            Self::Subtract => "subtract",
            Self::Multiply => "multiply",
            Self::Scale => "scale",
            Self::Softmax => "softmax",
            Self::LayerNorm => "layer_norm",
            Self::DepthwiseConv2d => "depthwise_conv2d",
            Self::Linear => "linear",
            Self::Relu => "relu",
            Self::Silu => "silu",
            Self::Sigmoid => "sigmoid",
            Self::Exp => "exp",
            Self::Softplus => "softplus",
            Self::Mean => "mean",
            Self::Sum => "sum",
            Self::Concat => "concat",
            Self::Reshape => "reshape",
            Self::Transpose => "transpose",
            Self::Dropout => "dropout",
            Self::Conv2d => "conv2d",
        }
    }
}

impl FromStr for PrimitiveKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| TensorError::UnknownPrimitive(s.to_string()))
    }
}

/// A primitive together with its static arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    BatchedMatMul,
    Add,
    Subtract,
    Multiply,
    Scale(f64),
    Softmax {
        axis: usize,
    },
    /// inputs: x, gamma, beta
    LayerNorm,
    /// inputs: x, weight, optional bias
    DepthwiseConv2d,
    /// inputs: x, weight, optional bias
    Linear,
    Relu,
    Silu,
    Sigmoid,
    Exp,
    Softplus,
    Mean {
        axes: Vec<usize>,
    },
    Sum {
        axes: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Reshape {
        extents: Vec<usize>,
    },
    Transpose {
        perm: Vec<usize>,
    },
    /// The mask is drawn from `seed`, so the same descriptor always drops the same entries.
    Dropout {
        rate: f64,
        train: bool,
        seed: u64,
    },
    /// inputs: x, weight, optional bias
    Conv2d {
        stride: usize,
        padding: usize,
    },
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Self::MatMul => PrimitiveKind::MatMul,
            Self::BatchedMatMul => PrimitiveKind::BatchedMatMul,
            Self::Add => PrimitiveKind::Add,
            Self::Subtract => PrimitiveKind::Subtract,
            Self::Multiply => PrimitiveKind::Multiply,
            Self::Scale(_) => PrimitiveKind::Scale,
            Self::Softmax { .. } => PrimitiveKind::Softmax,
            Self::LayerNorm => PrimitiveKind::LayerNorm,
            Self::DepthwiseConv2d => PrimitiveKind::DepthwiseConv2d,
            Self::Linear => PrimitiveKind::Linear,
            Self::Relu => PrimitiveKind::Relu,
            Self::Silu => PrimitiveKind::Silu,
            Self::Sigmoid => PrimitiveKind::Sigmoid,
            Self::Exp => PrimitiveKind::Exp,
            Self::Softplus => PrimitiveKind::Softplus,
            Self::Mean { .. } => PrimitiveKind::Mean,
            Self::Sum { .. } => PrimitiveKind::Sum,
            Self::Concat { .. } => PrimitiveKind::Concat,
            Self::Reshape { .. } => PrimitiveKind::Reshape,
            Self::Transpose { .. } => PrimitiveKind::Transpose,
            Self::Dropout { .. } => PrimitiveKind::Dropout,
            Self::Conv2d { .. } => PrimitiveKind::Conv2d,
        }
    }
}

fn arity(op: &'static str, inputs: &[Tensor], lo: usize, hi: usize) -> Result<()> {
    if inputs.len() < lo || inputs.len() > hi {
        Err(TensorError::Arity { op, expected: lo, got: inputs.len() })
    } else {
        Ok(())
    }
}

/// Applies `op` to `inputs`.
pub fn apply(op: &Primitive, inputs: &[Tensor]) -> Result<Tensor> {
    let name = op.kind().name();
    match op {
        Primitive::Concat { axis } => return Tensor::concat(inputs, *axis),
        Primitive::MatMul | Primitive::BatchedMatMul | Primitive::Add | Primitive::Subtract | Primitive::Multiply => {
            arity(name, inputs, 2, 2)?
        }
        Primitive::LayerNorm => arity(name, inputs, 3, 3)?,
        Primitive::Linear | Primitive::DepthwiseConv2d | Primitive::Conv2d { .. } => arity(name, inputs, 2, 3)?,
        _ => arity(name, inputs, 1, 1)?,
    }
    let x = &inputs[0];
    match op {
        Primitive::MatMul => x.matmul(&inputs[1]),
        Primitive::BatchedMatMul => x.bmm(&inputs[1]),
        Primitive::Add => x.add(&inputs[1]),
        Primitive::Subtract => x.sub(&inputs[1]),
        Primitive::Multiply => x.mul(&inputs[1]),
        Primitive::Scale(c) => Ok(x.scale(*c)),
        Primitive::Softmax { axis } => x.softmax(*axis),
        Primitive::LayerNorm => x.layer_norm(&inputs[1], &inputs[2]),
        Primitive::DepthwiseConv2d => x.depthwise_conv2d(&inputs[1], inputs.get(2)),
        Primitive::Linear => x.linear(&inputs[1], inputs.get(2)),
        Primitive::Relu => Ok(x.relu()),
        Primitive::Silu => Ok(x.silu()),
        Primitive::Sigmoid => Ok(x.sigmoid()),
        Primitive::Exp => Ok(x.exp()),
        Primitive::Softplus => Ok(x.softplus()),
        Primitive::Mean { axes } => x.mean_axes(axes),
        Primitive::Sum { axes } => x.sum_axes(axes),
        Primitive::Reshape { extents } => x.reshape(extents),
        Primitive::Transpose { perm } => x.permute(perm),
        Primitive::Dropout { rate, train, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            x.dropout(*rate, *train, &mut rng)
        }
        Primitive::Conv2d { stride, padding } => x.conv2d(&inputs[1], inputs.get(2), *stride, *padding),
        Primitive::Concat { .. } => unreachable!(),
    }
}
