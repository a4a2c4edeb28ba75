use std::collections::{HashMap, HashSet};

use super::ops::backward_rule;
use super::{Result, Tensor, TensorError};

/// Leaf gradients produced by [`backward`], keyed by tensor identity.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: HashMap<u64, (Vec<usize>, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, if `t` was a reachable leaf.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        self.grads.get(&t.id()).map(|(ext, g)| Tensor::new(g.clone(), ext).expect("gradient extents match"))
    }

    pub fn get_raw(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(|(_, g)| g.as_slice())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Post-order over the part of the graph that requires gradients.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    seen.insert(root.id());
    while let Some((t, child)) = stack.pop() {
        let parents = t.node().map(|n| n.parents()).unwrap_or(&[]);
        if let Some(p) = parents.get(child) {
            let p = p.clone();
            stack.push((t, child + 1));
            if p.requires_grad() && seen.insert(p.id()) {
                stack.push((p, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

/// Reverse-mode gradients of a scalar `loss` with respect to every reachable leaf.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.extents().to_vec()));
    }
    if !loss.requires_grad() {
        return Err(TensorError::EmptyGraph);
    }
    let order = topo_order(loss);
    let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
    pending.insert(loss.id(), vec![1.0]);
    let mut out = Gradients::default();
    for t in order.iter().rev() {
        let Some(g) = pending.remove(&t.id()) else { continue };
        match t.node() {
            None => {
                out.grads.insert(t.id(), (t.extents().to_vec(), g));
            }
            Some(node) => {
                let pg = backward_rule(&node.op, &node.parents, t, &g);
                for (p, grad) in node.parents.iter().zip(pg) {
                    let Some(grad) = grad else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(grad.len(), p.numel(), "{} backward", node.op.name());
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), grad);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
