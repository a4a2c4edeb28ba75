//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor is immutable once created. Operations on tensors that
//! require gradients record a [`GraphNode`] holding the parents and whatever
//! forward values the backward rule needs; [`backward`] walks that graph in
//! reverse topological order.

mod autograd;
mod gradcheck;
mod ops;
mod primitive;
mod shape;

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use autograd::{backward, Gradients};
pub use gradcheck::{check_primitive, finite_difference_gradient, random_case, relative_error};
pub use primitive::{apply, Primitive, PrimitiveKind};

pub(crate) use ops::Op;

/// Layer-normalization epsilon used throughout.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: invalid extents {extents:?}: {reason}")]
    InvalidExtents { op: &'static str, extents: Vec<usize>, reason: String },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("backward requires a scalar loss, got extents {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not connected to any tensor that requires a gradient")]
    EmptyGraph,
    #[error("function returned a non-finite value ({0})")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// A recorded operation: the op kind with its saved values, and its inputs.
pub struct GraphNode {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

impl GraphNode {
    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn parents(&self) -> &[Tensor] {
        &self.parents
    }
}

struct Inner {
    id: u64,
    extents: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    node: Option<GraphNode>,
}

impl Drop for Inner {
    // Long chains would otherwise drop recursively and can exhaust the stack.
    fn drop(&mut self) {
        let mut stack = match self.node.take() {
            Some(node) => node.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.0) {
                if let Some(node) = inner.node.take() {
                    stack.extend(node.parents);
                }
            }
        }
    }
}

/// Shared handle to an immutable tensor value.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("extents", &self.0.extents);
        if self.0.data.len() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad).field("op", &self.0.node.as_ref().map(|n| n.op.name())).finish()
    }
}

pub(crate) fn numel_of(extents: &[usize]) -> usize {
    extents.iter().product()
}

fn check_extents(op: &'static str, extents: &[usize], len: usize) -> Result<()> {
    if extents.is_empty() || extents.contains(&0) {
        return Err(TensorError::InvalidExtents {
            op,
            extents: extents.to_vec(),
            reason: "extents must be non-empty and positive".into(),
        });
    }
    if numel_of(extents) != len {
        return Err(TensorError::InvalidExtents {
            op,
            extents: extents.to_vec(),
            reason: format!("data length {len} does not match"),
        });
    }
    Ok(())
}

impl Tensor {
    fn build(data: Vec<f64>, extents: Vec<usize>, requires_grad: bool, node: Option<GraphNode>) -> Self {
        debug_assert_eq!(numel_of(&extents), data.len());
        Tensor(Arc::new(Inner { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), extents, data, requires_grad, node }))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<f64>, extents: &[usize]) -> Result<Self> {
        check_extents("new", extents, data.len())?;
        Ok(Self::build(data, extents.to_vec(), false, None))
    }

    /// Leaf tensor that receives a gradient in [`backward`].
    pub fn param(data: Vec<f64>, extents: &[usize]) -> Result<Self> {
        check_extents("param", extents, data.len())?;
        Ok(Self::build(data, extents.to_vec(), true, None))
    }

    /// 1-D constant from a slice.
    pub fn from_slice(values: &[f64]) -> Self {
        let n = values.len().max(1);
        let data = if values.is_empty() { vec![0.0] } else { values.to_vec() };
        Self::build(data, vec![n], false, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![v], vec![1], false, None)
    }

    pub fn zeros(extents: &[usize]) -> Self {
        Self::full(extents, 0.0)
    }

    pub fn full(extents: &[usize], v: f64) -> Self {
        assert!(!extents.is_empty() && !extents.contains(&0), "invalid extents {extents:?}");
        Self::build(vec![v; numel_of(extents)], extents.to_vec(), false, None)
    }

    /// Gaussian samples with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(extents: &[usize], std: f64, rng: &mut R) -> Self {
        let n = numel_of(extents);
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::build(data, extents.to_vec(), false, None)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(extents: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = numel_of(extents);
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Self::build(data, extents.to_vec(), false, None)
    }

    /// Same values as a gradient-tracking leaf.
    pub fn to_param(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.extents.clone(), true, None)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.extents.clone(), false, None)
    }

    /// Copy with replaced data; keeps extents and the requires-grad flag, drops history.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        check_extents("with_data", &self.0.extents, data.len())?;
        Ok(Self::build(data, self.0.extents.clone(), self.0.requires_grad, None))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn extents(&self) -> &[usize] {
        &self.0.extents
    }

    pub fn rank(&self) -> usize {
        self.0.extents.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn node(&self) -> Option<&GraphNode> {
        self.0.node.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor with extents {:?}", self.extents());
        self.0.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Result of an op; records the graph node when any parent needs a gradient.
    pub(crate) fn from_op(data: Vec<f64>, extents: Vec<usize>, op: Op, parents: Vec<Tensor>) -> Self {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| GraphNode { op, parents });
        Self::build(data, extents, requires_grad, node)
    }
}
