//! Forward kernels and their backward rules.

use rand::Rng;

use super::shape::{broadcast_extents, broadcast_index_map, permute_index_map, reduce_index_map, split_at_axis};
use super::{numel_of, Result, Tensor, TensorError, LAYER_NORM_EPS};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    MatMul { m: usize, k: usize, n: usize },
    BatchedMatMul { batch: usize, m: usize, k: usize, n: usize },
    Linear { rows: usize, fan_in: usize, fan_out: usize },
    Softmax { outer: usize, len: usize, inner: usize },
    LayerNorm { channels: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Conv2d(ConvGeom),
    DepthwiseConv2d(ConvGeom),
    Relu,
    Silu,
    Sigmoid,
    Exp,
    Softplus,
    Sum { axes: Vec<usize> },
    Mean { axes: Vec<usize>, count: usize },
    Concat { axis: usize, sizes: Vec<usize> },
    Reshape,
    Permute { perm: Vec<usize> },
    Dropout { mask: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul { .. } => "matmul",
            Op::BatchedMatMul { .. } => "batched_matmul",
            Op::Linear { .. } => "linear",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv2d(_) => "conv2d",
            Op::DepthwiseConv2d(_) => "depthwise_conv2d",
            Op::Relu => "relu",
            Op::Silu => "silu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Softplus => "softplus",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Concat { .. } => "concat",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "transpose",
            Op::Dropout { .. } => "dropout",
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::InvalidAxis { op, axis, rank })
    } else {
        Ok(())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.extents().to_vec(), rhs: b.extents().to_vec() }
}

/// `c[m,n] += a[m,k] · b[k,n]`
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,k] += g[m,n] · b[k,n]ᵀ`
fn gemm_nt_acc(g: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · g[m,n]`
fn gemm_tn_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let name = op.name();
        if self.extents() == other.extents() {
            let data = self.data().iter().zip(other.data()).map(|(a, b)| f(*a, *b)).collect();
            return Ok(Tensor::from_op(data, self.extents().to_vec(), op, vec![self.clone(), other.clone()]));
        }
        let out = broadcast_extents(name, self.extents(), other.extents())?;
        let ma = broadcast_index_map(self.extents(), &out);
        let mb = broadcast_index_map(other.extents(), &out);
        let (a, b) = (self.data(), other.data());
        let data = ma.iter().zip(&mb).map(|(&i, &j)| f(a[i], b[j])).collect();
        Ok(Tensor::from_op(data, out, op, vec![self.clone(), other.clone()]))
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.extents().to_vec(), op, vec![self.clone()])
    }

    /// Elementwise sum with numpy broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Op::Scale(c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn silu(&self) -> Tensor {
        self.unary(Op::Silu, |x| x * sigmoid(x))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Op::Softplus, softplus)
    }

    /// 2-D matrix product `[m,k] · [k,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ea, eb) = (self.extents(), other.extents());
        if ea.len() != 2 || eb.len() != 2 || ea[1] != eb[0] {
            return Err(mismatch("matmul", self, other));
        }
        let (m, k, n) = (ea[0], ea[1], eb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(), other.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(out, vec![m, n], Op::MatMul { m, k, n }, vec![self.clone(), other.clone()]))
    }

    /// Batched product over identical leading axes: `[..., m, k] · [..., k, n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (ea, eb) = (self.extents(), other.extents());
        let r = ea.len();
        if r < 3 || eb.len() != r || ea[..r - 2] != eb[..r - 2] || ea[r - 1] != eb[r - 2] {
            return Err(mismatch("batched_matmul", self, other));
        }
        let batch: usize = ea[..r - 2].iter().product();
        let (m, k, n) = (ea[r - 2], ea[r - 1], eb[r - 1]);
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            gemm_acc(
                &self.data()[b * m * k..(b + 1) * m * k],
                &other.data()[b * k * n..(b + 1) * k * n],
                &mut out[b * m * n..(b + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut ext = ea[..r - 2].to_vec();
        ext.extend([m, n]);
        Ok(Tensor::from_op(out, ext, Op::BatchedMatMul { batch, m, k, n }, vec![self.clone(), other.clone()]))
    }

    /// Affine map over the last axis: `x · Wᵀ + b` with `W` of extents `[out, in]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let ex = self.extents();
        let ew = weight.extents();
        let fan_in = *ex.last().unwrap();
        if ew.len() != 2 || ew[1] != fan_in {
            return Err(mismatch("linear", self, weight));
        }
        let fan_out = ew[0];
        if let Some(b) = bias {
            if b.extents() != [fan_out] {
                return Err(mismatch("linear", weight, b));
            }
        }
        let rows = self.numel() / fan_in;
        let (x, w) = (self.data(), weight.data());
        let mut out = vec![0.0; rows * fan_out];
        for r in 0..rows {
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let wr = &w[o * fan_in..(o + 1) * fan_in];
                let mut s: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                if let Some(b) = bias {
                    s += b.data()[o];
                }
                out[r * fan_out + o] = s;
            }
        }
        let mut ext = ex.to_vec();
        *ext.last_mut().unwrap() = fan_out;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(out, ext, Op::Linear { rows, fan_in, fan_out }, parents))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, len, inner) = split_at_axis(self.extents(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(x[base + l * inner]);
                }
                let mut s = 0.0;
                for l in 0..len {
                    let e = (x[base + l * inner] - mx).exp();
                    out[base + l * inner] = e;
                    s += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= s;
                }
            }
        }
        Ok(Tensor::from_op(out, self.extents().to_vec(), Op::Softmax { outer, len, inner }, vec![self.clone()]))
    }

    /// Layer normalization over the last (channel) axis followed by `γ·x̂ + β`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        let c = *self.extents().last().unwrap();
        if gamma.extents() != [c] {
            return Err(mismatch("layer_norm", self, gamma));
        }
        if beta.extents() != [c] {
            return Err(mismatch("layer_norm", self, beta));
        }
        let rows = self.numel() / c;
        let x = self.data();
        let (g, b) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x[r * c..(r + 1) * c];
            let mean = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (xr[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            self.extents().to_vec(),
            Op::LayerNorm { channels: c, xhat, rstd },
            vec![self.clone(), gamma.clone(), beta.clone()],
        ))
    }

    /// Dense 2-D convolution of `[B, Cin, H, W]` with weights `[Cout, Cin, k, k]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let (ex, ew) = (self.extents(), weight.extents());
        if ex.len() != 4 || ew.len() != 4 || ew[1] != ex[1] || ew[2] != ew[3] || stride == 0 {
            return Err(mismatch("conv2d", self, weight));
        }
        let (batch, cin, h, w) = (ex[0], ex[1], ex[2], ex[3]);
        let (cout, k) = (ew[0], ew[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(mismatch("conv2d", self, weight));
        }
        if let Some(b) = bias {
            if b.extents() != [cout] {
                return Err(mismatch("conv2d", weight, b));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { batch, cin, cout, h, w, k, stride, pad, ho, wo };
        let (x, wt) = (self.data(), weight.data());
        let mut out = vec![0.0; batch * cout * ho * wo];
        for bi in 0..batch {
            for co in 0..cout {
                let ob = &mut out[(bi * cout + co) * ho * wo..(bi * cout + co + 1) * ho * wo];
                if let Some(b) = bias {
                    ob.iter_mut().for_each(|v| *v = b.data()[co]);
                }
                for ci in 0..cin {
                    let xb = &x[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                    let wb = &wt[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                    conv_plane(xb, wb, ob, &geom);
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(out, vec![batch, cout, ho, wo], Op::Conv2d(geom), parents))
    }

    /// Per-channel `k×k` convolution, unit stride, same padding; weights `[C, k, k]`.
    pub fn depthwise_conv2d(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (ex, ew) = (self.extents(), weight.extents());
        if ex.len() != 4 || ew.len() != 3 || ew[0] != ex[1] || ew[1] != ew[2] || ew[1] % 2 == 0 {
            return Err(mismatch("depthwise_conv2d", self, weight));
        }
        let (batch, c, h, w) = (ex[0], ex[1], ex[2], ex[3]);
        let k = ew[1];
        if let Some(b) = bias {
            if b.extents() != [c] {
                return Err(mismatch("depthwise_conv2d", weight, b));
            }
        }
        let geom = ConvGeom { batch, cin: c, cout: c, h, w, k, stride: 1, pad: k / 2, ho: h, wo: w };
        let (x, wt) = (self.data(), weight.data());
        let mut out = vec![0.0; x.len()];
        for bi in 0..batch {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                let ob = &mut out[plane..plane + h * w];
                if let Some(b) = bias {
                    ob.iter_mut().for_each(|v| *v = b.data()[ci]);
                }
                conv_plane(&x[plane..plane + h * w], &wt[ci * k * k..(ci + 1) * k * k], ob, &geom);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(out, ex.to_vec(), Op::DepthwiseConv2d(geom), parents))
    }

    fn check_axes(&self, op: &'static str, axes: &[usize]) -> Result<Vec<usize>> {
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &a in &axes {
            check_axis(op, a, self.rank())?;
        }
        Ok(axes)
    }

    /// Sum over `axes`; the reduced axes are removed (full reduction gives `[1]`).
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let axes = self.check_axes("sum", axes)?;
        let (ext, map) = reduce_index_map(self.extents(), &axes);
        let mut out = vec![0.0; numel_of(&ext)];
        for (v, &m) in self.data().iter().zip(&map) {
            out[m] += v;
        }
        Ok(Tensor::from_op(out, ext, Op::Sum { axes }, vec![self.clone()]))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let axes = self.check_axes("mean", axes)?;
        let (ext, map) = reduce_index_map(self.extents(), &axes);
        let count = self.numel() / numel_of(&ext);
        let mut out = vec![0.0; numel_of(&ext)];
        for (v, &m) in self.data().iter().zip(&map) {
            out[m] += v;
        }
        out.iter_mut().for_each(|v| *v /= count as f64);
        Ok(Tensor::from_op(out, ext, Op::Mean { axes, count }, vec![self.clone()]))
    }

    pub fn sum(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.sum_axes(&axes).expect("full reduction is always valid")
    }

    pub fn mean(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.mean_axes(&axes).expect("full reduction is always valid")
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Arity { op: "concat", expected: 1, got: 0 })?;
        check_axis("concat", axis, first.rank())?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.extents().iter().zip(first.extents()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(mismatch("concat", first, p));
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.extents()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split_at_axis(first.extents(), axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &s) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&p.data()[o * s * inner..(o + 1) * s * inner]);
            }
        }
        let mut ext = first.extents().to_vec();
        ext[axis] = total;
        Ok(Tensor::from_op(out, ext, Op::Concat { axis, sizes }, parts.to_vec()))
    }

    /// Copying reshape to extents with the same element count.
    pub fn reshape(&self, extents: &[usize]) -> Result<Tensor> {
        if extents.is_empty() || extents.contains(&0) || numel_of(extents) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.extents().to_vec(),
                rhs: extents.to_vec(),
            });
        }
        Ok(Tensor::from_op(self.data().to_vec(), extents.to_vec(), Op::Reshape, vec![self.clone()]))
    }

    /// Copying axis permutation; `perm[i]` is the source axis of output axis `i`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.rank()];
        if perm.len() != self.rank() || perm.iter().any(|&p| p >= self.rank() || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                lhs: self.extents().to_vec(),
                rhs: perm.to_vec(),
            });
        }
        let (ext, map) = permute_index_map(self.extents(), perm);
        let x = self.data();
        let out = map.iter().map(|&i| x[i]).collect();
        Ok(Tensor::from_op(out, ext, Op::Permute { perm: perm.to_vec() }, vec![self.clone()]))
    }

    /// Swap two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis("transpose", a.max(b), self.rank())?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Inverted dropout. In eval mode (`train == false`) or at rate 0 this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, train: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidExtents {
                op: "dropout",
                extents: self.extents().to_vec(),
                reason: format!("rate {rate} outside [0,1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.numel()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(out, self.extents().to_vec(), Op::Dropout { mask }, vec![self.clone()]))
    }
}

fn conv_plane(x: &[f64], wt: &[f64], out: &mut [f64], g: &ConvGeom) {
    for kh in 0..g.k {
        for kw in 0..g.k {
            let wv = wt[kh * g.k + kw];
            if wv == 0.0 {
                continue;
            }
            for oh in 0..g.ho {
                let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                if ih < 0 || ih >= g.h as isize {
                    continue;
                }
                let xrow = &x[ih as usize * g.w..(ih as usize + 1) * g.w];
                let orow = &mut out[oh * g.wo..(oh + 1) * g.wo];
                for (ow, o) in orow.iter_mut().enumerate() {
                    let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                    if iw >= 0 && iw < g.w as isize {
                        *o += wv * xrow[iw as usize];
                    }
                }
            }
        }
    }
}

/// Accumulates input and weight gradients of one `(in-plane, weight-plane)` pair.
fn conv_plane_backward(
    x: &[f64],
    wt: &[f64],
    gout: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    g: &ConvGeom,
) {
    let mut gx = gx;
    let mut gw = gw;
    for kh in 0..g.k {
        for kw in 0..g.k {
            let wv = wt[kh * g.k + kw];
            let mut wacc = 0.0;
            for oh in 0..g.ho {
                let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                if ih < 0 || ih >= g.h as isize {
                    continue;
                }
                let ih = ih as usize;
                for ow in 0..g.wo {
                    let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                    if iw < 0 || iw >= g.w as isize {
                        continue;
                    }
                    let go = gout[oh * g.wo + ow];
                    let xi = ih * g.w + iw as usize;
                    wacc += go * x[xi];
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[xi] += go * wv;
                    }
                }
            }
            if let Some(gw) = gw.as_deref_mut() {
                gw[kh * g.k + kw] += wacc;
            }
        }
    }
}

fn unbroadcast(g: &[f64], src: &[usize], out: &[usize], scale: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut r = vec![0.0; numel_of(src)];
    if src == out {
        for (i, (rv, gv)) in r.iter_mut().zip(g).enumerate() {
            *rv = gv * scale(i);
        }
    } else {
        let map = broadcast_index_map(src, out);
        for (i, (&m, gv)) in map.iter().zip(g).enumerate() {
            r[m] += gv * scale(i);
        }
    }
    r
}

/// Gradients for every parent of a node, `None` where the parent needs none.
pub(crate) fn backward_rule(op: &Op, parents: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let need = |i: usize| parents.get(i).is_some_and(|p| p.requires_grad());
    let oext = out.extents();
    match op {
        Op::Add | Op::Sub | Op::Mul => {
            let (a, b) = (&parents[0], &parents[1]);
            let ga = need(0).then(|| match op {
                Op::Mul => {
                    let mb = broadcast_index_map(b.extents(), oext);
                    unbroadcast(g, a.extents(), oext, |i| b.data()[mb[i]])
                }
                _ => unbroadcast(g, a.extents(), oext, |_| 1.0),
            });
            let gb = need(1).then(|| match op {
                Op::Mul => {
                    let ma = broadcast_index_map(a.extents(), oext);
                    unbroadcast(g, b.extents(), oext, |i| a.data()[ma[i]])
                }
                Op::Sub => unbroadcast(g, b.extents(), oext, |_| -1.0),
                _ => unbroadcast(g, b.extents(), oext, |_| 1.0),
            });
            vec![ga, gb]
        }
        Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
        Op::Relu => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
        }
        Op::Silu => {
            let x = parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect(),
            )]
        }
        Op::Sigmoid => vec![Some(g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect())],
        Op::Exp => vec![Some(g.iter().zip(out.data()).map(|(g, y)| g * y).collect())],
        Op::Softplus => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect())]
        }
        Op::Dropout { mask } => vec![Some(g.iter().zip(mask).map(|(g, m)| g * m).collect())],
        Op::MatMul { m, k, n } => {
            let (a, b) = (&parents[0], &parents[1]);
            let ga = need(0).then(|| {
                let mut r = vec![0.0; m * k];
                gemm_nt_acc(g, b.data(), &mut r, *m, *k, *n);
                r
            });
            let gb = need(1).then(|| {
                let mut r = vec![0.0; k * n];
                gemm_tn_acc(a.data(), g, &mut r, *m, *k, *n);
                r
            });
            vec![ga, gb]
        }
        Op::BatchedMatMul { batch, m, k, n } => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k, n) = (*m, *k, *n);
            let ga = need(0).then(|| {
                let mut r = vec![0.0; batch * m * k];
                for bi in 0..*batch {
                    gemm_nt_acc(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &b.data()[bi * k * n..(bi + 1) * k * n],
                        &mut r[bi * m * k..(bi + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
                r
            });
            let gb = need(1).then(|| {
                let mut r = vec![0.0; batch * k * n];
                for bi in 0..*batch {
                    gemm_tn_acc(
                        &a.data()[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut r[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                r
            });
            vec![ga, gb]
        }
        Op::Linear { rows, fan_in, fan_out } => {
            let (x, w) = (&parents[0], &parents[1]);
            let (rows, fi, fo) = (*rows, *fan_in, *fan_out);
            let gx = need(0).then(|| {
                let mut r = vec![0.0; rows * fi];
                gemm_acc(g, w.data(), &mut r, rows, fo, fi);
                r
            });
            let gw = need(1).then(|| {
                let mut r = vec![0.0; fo * fi];
                gemm_tn_acc(g, x.data(), &mut r, rows, fo, fi);
                r
            });
            let mut res = vec![gx, gw];
            if parents.len() == 3 {
                res.push(need(2).then(|| {
                    let mut r = vec![0.0; fo];
                    for row in g.chunks(fo) {
                        for (rv, gv) in r.iter_mut().zip(row) {
                            *rv += gv;
                        }
                    }
                    r
                }));
            }
            res
        }
        Op::Softmax { outer, len, inner } => {
            let y = out.data();
            let mut r = vec![0.0; y.len()];
            for o in 0..*outer {
                for i in 0..*inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..*len).map(|l| g[base + l * inner] * y[base + l * inner]).sum();
                    for l in 0..*len {
                        let idx = base + l * inner;
                        r[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            vec![Some(r)]
        }
        Op::LayerNorm { channels, xhat, rstd } => {
            let c = *channels;
            let gamma = parents[1].data();
            let gx = need(0).then(|| {
                let mut r = vec![0.0; xhat.len()];
                for (row, rs) in rstd.iter().enumerate() {
                    let off = row * c;
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        let dh = g[off + j] * gamma[j];
                        m1 += dh;
                        m2 += dh * xhat[off + j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        let dh = g[off + j] * gamma[j];
                        r[off + j] = rs * (dh - m1 - xhat[off + j] * m2);
                    }
                }
                r
            });
            let gg = need(1).then(|| {
                let mut r = vec![0.0; c];
                for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                    r[i % c] += gv * h;
                }
                r
            });
            let gb = need(2).then(|| {
                let mut r = vec![0.0; c];
                for (i, gv) in g.iter().enumerate() {
                    r[i % c] += gv;
                }
                r
            });
            vec![gx, gg, gb]
        }
        Op::Conv2d(geom) => {
            let (x, w) = (&parents[0], &parents[1]);
            let ConvGeom { batch, cin, cout, h, w: wd, k, ho, wo, .. } = *geom;
            let mut gx = need(0).then(|| vec![0.0; x.numel()]);
            let mut gw = need(1).then(|| vec![0.0; w.numel()]);
            for bi in 0..batch {
                for co in 0..cout {
                    let go = &g[(bi * cout + co) * ho * wo..(bi * cout + co + 1) * ho * wo];
                    for ci in 0..cin {
                        let xo = (bi * cin + ci) * h * wd;
                        let wo_ = (co * cin + ci) * k * k;
                        conv_plane_backward(
                            &x.data()[xo..xo + h * wd],
                            &w.data()[wo_..wo_ + k * k],
                            go,
                            gx.as_mut().map(|v| &mut v[xo..xo + h * wd]),
                            gw.as_mut().map(|v| &mut v[wo_..wo_ + k * k]),
                            geom,
                        );
                    }
                }
            }
            let mut res = vec![gx, gw];
            if parents.len() == 3 {
                res.push(need(2).then(|| {
                    let mut r = vec![0.0; cout];
                    for (i, gv) in g.iter().enumerate() {
                        r[(i / (ho * wo)) % cout] += gv;
                    }
                    r
                }));
            }
            res
        }
        Op::DepthwiseConv2d(geom) => {
            let (x, w) = (&parents[0], &parents[1]);
            let ConvGeom { batch, cin: c, h, w: wd, k, .. } = *geom;
            let mut gx = need(0).then(|| vec![0.0; x.numel()]);
            let mut gw = need(1).then(|| vec![0.0; w.numel()]);
            for bi in 0..batch {
                for ci in 0..c {
                    let p = (bi * c + ci) * h * wd;
                    conv_plane_backward(
                        &x.data()[p..p + h * wd],
                        &w.data()[ci * k * k..(ci + 1) * k * k],
                        &g[p..p + h * wd],
                        gx.as_mut().map(|v| &mut v[p..p + h * wd]),
                        gw.as_mut().map(|v| &mut v[ci * k * k..(ci + 1) * k * k]),
                        geom,
                    );
                }
            }
            let mut res = vec![gx, gw];
            if parents.len() == 3 {
                res.push(need(2).then(|| {
                    let mut r = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        r[(i / (h * wd)) % c] += gv;
                    }
                    r
                }));
            }
            res
        }
        Op::Sum { axes } | Op::Mean { axes, .. } => {
            let scale = match op {
                Op::Mean { count, .. } => 1.0 / *count as f64,
                _ => 1.0,
            };
            let (_, map) = reduce_index_map(parents[0].extents(), axes);
            vec![Some(map.iter().map(|&m| g[m] * scale).collect())]
        }
        Op::Concat { axis, sizes } => {
            let total: usize = sizes.iter().sum();
            let (outer, _, inner) = split_at_axis(oext, *axis);
            let mut offset = 0;
            let mut res = Vec::with_capacity(sizes.len());
            for (pi, &s) in sizes.iter().enumerate() {
                if need(pi) {
                    let mut r = Vec::with_capacity(outer * s * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        r.extend_from_slice(&g[start..start + s * inner]);
                    }
                    res.push(Some(r));
                } else {
                    res.push(None);
                }
                offset += s;
            }
            res
        }
        Op::Permute { perm } => {
            let (_, map) = permute_index_map(parents[0].extents(), perm);
            let mut r = vec![0.0; g.len()];
            for (gv, &m) in g.iter().zip(&map) {
                r[m] = *gv;
            }
            vec![Some(r)]
        }
    }
}
