use rand::seq::SliceRandom;
use rand::Rng;

use super::autograd::backward;
use super::primitive::{apply, Primitive, PrimitiveKind};
use super::{no_grad, Result, Tensor, TensorError};

/// Central-difference gradient of a scalar-valued `f` at `x`.
///
/// `f` is evaluated with graph recording disabled; it must be deterministic.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, epsilon: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut eval = |data: Vec<f64>| -> Result<f64> {
        let probe = Tensor::new(data, x.extents())?;
        let v = no_grad(|| f(&probe))?;
        if v.numel() != 1 {
            return Err(TensorError::NonScalarLoss(v.extents().to_vec()));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite(v));
        }
        Ok(v)
    };
    let base = x.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += epsilon;
        let mut minus = base.clone();
        minus[i] -= epsilon;
        grad.push((eval(plus)? - eval(minus)?) / (2.0 * epsilon));
    }
    Tensor::new(grad, x.extents())
}

/// Normwise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Draws a random, well-conditioned instance of `kind`: the primitive with its
/// arguments plus input tensors. Kink-sensitive inputs are kept away from the kink.
pub fn random_case<R: Rng + ?Sized>(kind: PrimitiveKind, rng: &mut R) -> (Primitive, Vec<Tensor>) {
    let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let b = rng.random_range(1..=3);
    let (c, s) = (rng.random_range(1..=3), rng.random_range(3..=5));
    let (stride, padding, cout) = (rng.random_range(1..=2), rng.random_range(0..=1), rng.random_range(1..=3));
    let mut perm = vec![0, 1, 2];
    perm.shuffle(rng);
    let seed = rng.random();
    let mut t = |e: &[usize]| Tensor::randn(e, 1.0, rng);
    match kind {
        PrimitiveKind::MatMul => (Primitive::MatMul, vec![t(&[m, k]), t(&[k, n])]),
        PrimitiveKind::BatchedMatMul => (Primitive::BatchedMatMul, vec![t(&[b, m, k]), t(&[b, k, n])]),
        PrimitiveKind::Add => (Primitive::Add, vec![t(&[m, n]), t(&[1, n])]),
        PrimitiveKind::Subtract => (Primitive::Subtract, vec![t(&[m, 1]), t(&[m, n])]),
        PrimitiveKind::Multiply => (Primitive::Multiply, vec![t(&[b, m, n]), t(&[m, n])]),
        PrimitiveKind::Scale => (Primitive::Scale(-1.7), vec![t(&[m, n])]),
        PrimitiveKind::Softmax => (Primitive::Softmax { axis: 1 }, vec![t(&[m, k + 1, n])]),
        PrimitiveKind::LayerNorm => (Primitive::LayerNorm, vec![t(&[m, k + 1]), t(&[k + 1]), t(&[k + 1])]),
        PrimitiveKind::DepthwiseConv2d => (Primitive::DepthwiseConv2d, vec![t(&[b, c, s, s]), t(&[c, 3, 3]), t(&[c])]),
        PrimitiveKind::Linear => (Primitive::Linear, vec![t(&[b, m, k]), t(&[n, k]), t(&[n])]),
        PrimitiveKind::Relu => {
            let x = t(&[m, n]);
            let away: Vec<f64> =
                x.data().iter().map(|v| if v.abs() < 0.05 { v + v.signum() * 0.1 } else { *v }).collect();
            (Primitive::Relu, vec![Tensor::new(away, &[m, n]).expect("extents")])
        }
        PrimitiveKind::Silu => (Primitive::Silu, vec![t(&[m, n])]),
        PrimitiveKind::Sigmoid => (Primitive::Sigmoid, vec![t(&[m, n])]),
        PrimitiveKind::Exp => (Primitive::Exp, vec![t(&[m, n])]),
        PrimitiveKind::Softplus => (Primitive::Softplus, vec![t(&[m, n]).scale(3.0)]),
        PrimitiveKind::Mean => (Primitive::Mean { axes: vec![1] }, vec![t(&[m, k, n])]),
        PrimitiveKind::Sum => (Primitive::Sum { axes: vec![0, 2] }, vec![t(&[m, k, n])]),
        PrimitiveKind::Concat => (Primitive::Concat { axis: 1 }, vec![t(&[m, k]), t(&[m, n])]),
        PrimitiveKind::Reshape => (Primitive::Reshape { extents: vec![n * m, k] }, vec![t(&[m, k, n])]),
        PrimitiveKind::Transpose => (Primitive::Transpose { perm }, vec![t(&[m, k, n])]),
        PrimitiveKind::Dropout => (Primitive::Dropout { rate: 0.3, train: true, seed }, vec![t(&[m, n])]),
        PrimitiveKind::Conv2d => {
            (Primitive::Conv2d { stride, padding }, vec![t(&[b, c, s, s]), t(&[cout, c, 3, 3]), t(&[cout])])
        }
    }
}

/// Largest normwise relative error between backpropagated and central-difference
/// gradients over all inputs of `op`. The scalar objective is `Σ out ⊙ w` for a
/// fixed random `w`, so that outputs with constant sums still yield a signal.
pub fn check_primitive<R: Rng + ?Sized>(op: &Primitive, inputs: &[Tensor], rng: &mut R, eps: f64) -> Result<f64> {
    let params: Vec<Tensor> = inputs.iter().map(|t| t.to_param()).collect();
    let out = apply(op, &params)?;
    let w = Tensor::randn(out.extents(), 1.0, rng);
    let loss = out.mul(&w)?.sum();
    let grads = backward(&loss)?;
    let mut worst = 0.0f64;
    for (i, p) in params.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |probe| {
                let mut args: Vec<Tensor> = inputs.to_vec();
                args[i] = probe.clone();
                Ok(apply(op, &args)?.mul(&w)?.sum())
            },
            p,
            eps,
        )?;
        let analytic = grads.get(p).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; p.numel()]);
        worst = worst.max(relative_error(&analytic, numeric.data(), 1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for kind in PrimitiveKind::ALL {
            for _ in 0..5 {
                let (op, inputs) = random_case(kind, &mut rng);
                let err = check_primitive(&op, &inputs, &mut rng, 1e-6).unwrap();
                assert!(err < 1e-4, "{} error {err}", kind.name());
            }
        }
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::from_slice(&[0.3, -2.0, 5.5]);
        let g = finite_difference_gradient(|t| Ok(t.sum()), &x, 1e-4).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_of_first() {
        let x = Tensor::from_slice(&[3.0]);
        let g = finite_difference_gradient(|t| Ok(t.mul(t)?.sum()), &x, 1e-4).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = Tensor::from_slice(&[1000.0]);
        let r = finite_difference_gradient(|t| Ok(t.exp().sum()), &x, 1e-4);
        assert!(matches!(r, Err(TensorError::NonFinite(_))));
    }
}
