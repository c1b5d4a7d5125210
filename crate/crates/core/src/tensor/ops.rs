//! Differentiable operations recorded on a [`Graph`] and their adjoints.

use std::sync::Arc;

use super::conv::{self, ConvGeom, ConvSpec};
use super::gemm::gemm;
use super::graph::{BinaryKind, Graph, Op, UnaryKind, Var};
use super::norm::{self, GroupGeom};
use super::{invert_permutation, upsample, validate_permutation, Tensor};
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather `x` (with `shape`) into the axis order `axes`.
fn permute_raw(shape: &[usize], x: &[f64], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(x[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Reorder the entries along `axis`: output slot `t` takes input slot `perm[t]`.
fn permute_axis_raw(shape: &[usize], x: &[f64], axis: usize, perm: &[usize]) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for (t, &p) in perm.iter().enumerate() {
            let dst = (o * len + t) * inner;
            let src = (o * len + p) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
    out
}

impl Graph {
    fn unary(&mut self, x: Var, kind: UnaryKind, name: &'static str) -> Result<Var> {
        let xv = self.value(x);
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            UnaryKind::Relu => Box::new(|v: f64| if v > 0.0 { v } else { 0.0 }),
            UnaryKind::Sigmoid => Box::new(sigmoid),
            UnaryKind::Softplus => Box::new(softplus),
            UnaryKind::Exp => Box::new(f64::exp),
            UnaryKind::Log => {
                if let Some(bad) = xv.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!("log of nonpositive value {bad}")));
                }
                Box::new(f64::ln)
            }
            UnaryKind::Scale(c) => Box::new(move |v| v * c),
            UnaryKind::AddScalar(c) => Box::new(move |v| v + c),
            UnaryKind::Clamp(lo, hi) => Box::new(move |v: f64| v.clamp(lo, hi)),
        };
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(out, Op::Unary(x, kind), name)
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Relu, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid, "sigmoid")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Softplus, "softplus")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Exp, "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Log, "log")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, UnaryKind::Scale(c), "scale")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, UnaryKind::AddScalar(c), "add_scalar")
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Config(format!("clamp bounds reversed: {lo} > {hi}")));
        }
        self.unary(x, UnaryKind::Clamp(lo, hi), "clamp")
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, name: &'static str) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != bv.rank() {
            return Err(Error::Rank { op: name, expected: av.rank(), actual: bv.rank() });
        }
        for (axis, (&x, &y)) in av.shape().iter().zip(bv.shape()).enumerate() {
            if x != y {
                return Err(Error::Dim { op: name, axis, expected: x, actual: y });
            }
        }
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
            BinaryKind::Div => |x: f64, y: f64| x / y,
        };
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Binary(a, b, kind), name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div, "div")
    }

    fn check_trailing(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() {
            return Err(Error::Rank { op, expected: sa.len(), actual: sb.len() });
        }
        let lead = sa.len() - sb.len();
        for (i, (&x, &y)) in sa[lead..].iter().zip(sb).enumerate() {
            if x != y {
                return Err(Error::Dim { op, axis: lead + i, expected: x, actual: y });
            }
        }
        Ok(())
    }

    /// `a + b` where `b` matches the trailing axes of `a` and is repeated
    /// over the leading ones.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_trailing(a, b, "add_bcast")?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.numel();
        let data = av.data().iter().enumerate().map(|(i, &x)| x + bv.data()[i % n]).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::AddBcast(a, b), "add_bcast")
    }

    /// `a * b` with the broadcasting rule of [`Graph::add_bcast`].
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_trailing(a, b, "mul_bcast")?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.numel();
        let data = av.data().iter().enumerate().map(|(i, &x)| x * bv.data()[i % n]).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::MulBcast(a, b), "mul_bcast")
    }

    /// Grouped 2D cross-correlation of `[N, Cin, H, W]` with
    /// `[Cout, Cin/groups, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), b.map(|b| self.shape(b)), spec)?;
        let out = conv::forward_raw(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(geom.out_shape(), out)?;
        self.push(out, Op::Conv { x, w, b, geom }, "conv2d")
    }

    /// Per-channel convolution; `w` is `[C, 1, k, k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let c = self.shape(x).get(1).copied().unwrap_or(0);
        self.conv2d(x, w, b, ConvSpec::new(stride, padding, c.max(1)))
    }

    /// 1x1 convolution; `w` is `[Cout, Cin, 1, 1]`.
    pub fn pointwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let k = self.shape(w).get(2).copied().unwrap_or(0);
        if k != 1 {
            return Err(Error::Dim { op: "pointwise_conv2d", axis: 2, expected: 1, actual: k });
        }
        self.conv2d(x, w, b, ConvSpec::same(0))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let geom = GroupGeom::new(self.shape(x), self.shape(gamma), self.shape(beta), groups, eps)?;
        let (out, means, rstds) = norm::forward_raw(
            &geom,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(out, Op::GroupNorm { x, gamma, beta, geom, means, rstds }, "group_norm")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() {
                return Err(Error::Rank { op: "concat", expected: base.len(), actual: s.len() });
            }
            for (i, (&x, &y)) in base.iter().zip(s).enumerate() {
                if i != axis && x != y {
                    return Err(Error::Dim { op: "concat", axis: i, expected: x, actual: y });
                }
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Reorder axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes.len() != shape.len() {
            return Err(Error::Rank { op: "permute", expected: shape.len(), actual: axes.len() });
        }
        validate_permutation(axes, shape.len()).map_err(|_| Error::Shape(format!("invalid axis order {axes:?}")))?;
        let (out_shape, data) = permute_raw(&shape, self.value(x).data(), axes);
        let out = Tensor::new(out_shape, data)?;
        self.push(out, Op::Permute { x, axes: axes.to_vec() }, "permute")
    }

    /// Reorder entries along `axis` so that slot `t` holds input slot
    /// `perm[t]`.
    pub fn permute_axis(&mut self, x: Var, axis: usize, perm: Arc<Vec<usize>>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for rank {}", shape.len())));
        }
        validate_permutation(&perm, shape[axis])?;
        let data = permute_axis_raw(&shape, self.value(x).data(), axis, &perm);
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::PermuteRows { x, axis, perm }, "permute_rows")
    }

    /// Reorder axis-0 rows by `perm`.
    pub fn permute_rows(&mut self, x: Var, perm: Arc<Vec<usize>>) -> Result<Var> {
        self.permute_axis(x, 0, perm)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum() / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), "mean")
    }

    /// Bilinear upsampling of `[N, C, H, W]` by an integer factor.
    pub fn bilinear_upsample(&mut self, x: Var, scale: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        upsample::check(&s, scale)?;
        let out = upsample::forward_raw(&s, self.value(x).data(), scale);
        let out = Tensor::new([s[0], s[1], s[2] * scale, s[3] * scale], out)?;
        self.push(out, Op::Upsample { x, scale }, "bilinear_upsample")
    }

    /// `[M, K] x [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 {
            return Err(Error::Rank { op: "matmul", expected: 2, actual: sa.len() });
        }
        if sb.len() != 2 {
            return Err(Error::Rank { op: "matmul", expected: 2, actual: sb.len() });
        }
        if sa[1] != sb[0] {
            return Err(Error::Dim { op: "matmul", axis: 0, expected: sa[1], actual: sb[0] });
        }
        let mut out = vec![0.0; sa[0] * sb[1]];
        gemm(sa[0], sa[1], sb[1], self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let out = Tensor::new([sa[0], sb[1]], out)?;
        self.push(out, Op::Matmul(a, b), "matmul")
    }

    /// Affine map over the last axis: `x[..., in] @ w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d_in = *shape.last().ok_or_else(|| Error::Shape("linear on rank-0 tensor".into()))?;
        let rows = shape.iter().product::<usize>() / d_in;
        let flat = self.reshape(x, &[rows, d_in])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_bcast(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.shape(w)[1];
        self.reshape(y, &out_shape)
    }

    pub(crate) fn backward_node(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => vec![],
            Op::Unary(x, kind) => {
                let xv = val(*x);
                let y = node.value.data();
                let gx: Vec<f64> = match *kind {
                    UnaryKind::Relu => g.iter().zip(xv).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect(),
                    UnaryKind::Sigmoid => g.iter().zip(y).map(|(&g, &s)| g * s * (1.0 - s)).collect(),
                    UnaryKind::Softplus => g.iter().zip(xv).map(|(&g, &x)| g * sigmoid(x)).collect(),
                    UnaryKind::Exp => g.iter().zip(y).map(|(&g, &e)| g * e).collect(),
                    UnaryKind::Log => g.iter().zip(xv).map(|(&g, &x)| g / x).collect(),
                    UnaryKind::Scale(c) => g.iter().map(|&g| g * c).collect(),
                    UnaryKind::AddScalar(_) => g.to_vec(),
                    UnaryKind::Clamp(lo, hi) => g
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x >= lo && x <= hi { g } else { 0.0 })
                        .collect(),
                };
                vec![(*x, gx)]
            }
            Op::Binary(a, b, kind) => {
                let (av, bv) = (val(*a), val(*b));
                match kind {
                    BinaryKind::Add => vec![(*a, g.to_vec()), (*b, g.to_vec())],
                    BinaryKind::Sub => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
                    BinaryKind::Mul => vec![
                        (*a, g.iter().zip(bv).map(|(g, y)| g * y).collect()),
                        (*b, g.iter().zip(av).map(|(g, x)| g * x).collect()),
                    ],
                    BinaryKind::Div => vec![
                        (*a, g.iter().zip(bv).map(|(g, y)| g / y).collect()),
                        (
                            *b,
                            g.iter().zip(av).zip(bv).map(|((g, x), y)| -g * x / (y * y)).collect(),
                        ),
                    ],
                }
            }
            Op::AddBcast(a, b) => {
                let n = self.value(*b).numel();
                let mut gb = vec![0.0; n];
                for (i, &v) in g.iter().enumerate() {
                    gb[i % n] += v;
                }
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::MulBcast(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = bv.len();
                let mut gb = vec![0.0; n];
                let mut ga = vec![0.0; g.len()];
                for (i, &v) in g.iter().enumerate() {
                    gb[i % n] += v * av[i];
                    ga[i] = v * bv[i % n];
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Conv { x, w, b, geom } => {
                let need = [
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                ];
                let grads = conv::backward_raw(geom, val(*x), val(*w), g, need);
                let mut out = Vec::with_capacity(3);
                if let Some(gx) = grads.x {
                    out.push((*x, gx));
                }
                if let Some(gw) = grads.w {
                    out.push((*w, gw));
                }
                if let (Some(b), Some(gb)) = (b, grads.b) {
                    out.push((*b, gb));
                }
                out
            }
            Op::GroupNorm { x, gamma, beta, geom, means, rstds } => {
                let need = [self.requires_grad(*x), self.requires_grad(*gamma), self.requires_grad(*beta)];
                let (gx, gg, gb) = norm::backward_raw(geom, val(*x), val(*gamma), means, rstds, g, need);
                [(*x, gx), (*gamma, gg), (*beta, gb)]
                    .into_iter()
                    .filter_map(|(v, grad)| grad.map(|grad| (v, grad)))
                    .collect()
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|&v| {
                        let len = self.shape(v)[*axis] * inner;
                        let mut gv = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            gv.extend_from_slice(&g[o * total + offset..o * total + offset + len]);
                        }
                        offset += len;
                        (v, gv)
                    })
                    .collect()
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Permute { x, axes } => {
                let inv = invert_permutation(axes);
                let (_, gx) = permute_raw(node.value.shape(), g, &inv);
                vec![(*x, gx)]
            }
            Op::PermuteRows { x, axis, perm } => {
                let inv = invert_permutation(perm);
                vec![(*x, permute_axis_raw(node.value.shape(), g, *axis, &inv))]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::Upsample { x, scale } => vec![(*x, upsample::backward_raw(self.shape(*x), g, *scale))],
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, val(*b), true, &mut ga, 0.0);
                    out.push((*a, ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a), true, g, false, &mut gb, 0.0);
                    out.push((*b, gb));
                }
                out
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                op.backward(&values, &node.value, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(grad, &v)| grad.map(|grad| (v, grad)))
                    .collect()
            }
        }
    }
}
