use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const INSTANCE_NORM_EPS: f64 = 1e-5;
const L2_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddBias { x: Var, bias: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, out_channels: usize, cols: Vec<f64> },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, in_channels: usize },
    Sum(Var),
    Mean(Var),
    Abs(Var),
    AbsSum(Var),
    SqDist { a: Var, b: Var, dim: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu { x: Var, slope: f64 },
    Log(Var),
    Exp(Var),
    LogSoftmax { x: Var, classes: usize },
    InstanceNorm { x: Var, plane: usize, inv_std: Vec<f64> },
    ClampMin { x: Var, min: f64 },
    Reshape(Var),
    Rows { x: Var, start: usize },
    SelectPerRow { x: Var, indices: Vec<usize> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "transposed_conv2d",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Abs(_) => "abs",
            Op::AbsSum(_) => "abs_sum",
            Op::SqDist { .. } => "squared_l2_distance",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::ClampMin { .. } => "clamp_min",
            Op::Reshape(_) => "reshape",
            Op::Rows { .. } => "rows",
            Op::SelectPerRow { .. } => "select_per_row",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list for reverse-mode differentiation.
///
/// Every primitive appends one node whose inputs were recorded earlier, so
/// walking the list backwards is a valid reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    /// Signed distance of every kinked-op argument from its kink, in
    /// recording order. Used by the finite-difference checker.
    kinks: Vec<f64>,
    record_kinks: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn with_kink_recording() -> Self {
        Self { record_kinks: true, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that is treated as a constant (detached).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad matches value shape"))
    }

    /// Gradient as a raw slice; zero-length when `v` received none.
    pub fn grad_slice(&self, v: Var) -> &[f64] {
        self.grads.get(v.0).and_then(|g| g.as_deref()).unwrap_or(&[])
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, op, &[a, b])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, op, &[x])
    }

    fn note_kinks(&mut self, x: Var, at: f64) {
        if self.record_kinks {
            let vals: Vec<f64> = self.value(x).data().iter().map(|v| v - at).collect();
            self.kinks.extend(vals);
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(x, Op::Affine { x, scale }, |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// Matrix product of an `m×k` and a `k×n` tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    /// Adds a per-feature bias along dimension 1 (dense rows or conv channels).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias);
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::shape("add_bias", format!("{xs:?} + {bs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += b[(i / inner) % xs[1]];
        }
        self.push(Tensor::new(xs, data)?, Op::AddBias { x, bias }, &[x, bias])
    }

    /// 2-D convolution. `x` is `(N, C, H, W)`, `w` is `(O, C, k, k)`, `b` is `(O)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", format!("input {xs:?}, kernel {ws:?}")));
        }
        let geom = ConvGeom { channels: xs[1], height: xs[2], width: xs[3], kernel: ws[2], stride, padding };
        if !geom.valid() {
            return Err(Error::shape("conv2d", format!("kernel {} stride {stride} on {xs:?}", ws[2])));
        }
        let out_channels = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [out_channels] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {out_channels} channels", self.shape(b))));
            }
        }
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let batch = xs[0];
        let mut cols = vec![0.0; batch * rows * ncols];
        let mut out = vec![0.0; batch * out_channels * ncols];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for n in 0..batch {
            let c = &mut cols[n * rows * ncols..(n + 1) * rows * ncols];
            im2col(&geom, &xd[n * geom.image_len()..(n + 1) * geom.image_len()], c);
            let o = &mut out[n * out_channels * ncols..(n + 1) * out_channels * ncols];
            gemm(out_channels, rows, ncols, wd, false, c, false, o, false);
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (i, v) in out.iter_mut().enumerate() {
                *v += bd[(i / ncols) % out_channels];
            }
        }
        let shape = vec![batch, out_channels, geom.out_height(), geom.out_width()];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Tensor::new(shape, out)?, Op::Conv2d { x, w, b, geom, out_channels, cols }, &inputs)
    }

    /// Transposed convolution (adjoint of [`Tape::conv2d`]). `x` is
    /// `(N, C, H, W)`, `w` is `(C, O, k, k)`; output spatial size is
    /// `(H − 1)·stride − 2·padding + k + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != ws[3] || output_padding >= stride.max(1) {
            return Err(Error::shape("transposed_conv2d", format!("input {xs:?}, kernel {ws:?}")));
        }
        let k = ws[2];
        let span = |d: usize| ((d - 1) * stride + k + output_padding).checked_sub(2 * padding);
        let (ho, wo) = match (span(xs[2]), span(xs[3])) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(Error::shape("transposed_conv2d", format!("empty output for {xs:?}"))),
        };
        let out_channels = ws[1];
        let geom = ConvGeom { channels: out_channels, height: ho, width: wo, kernel: k, stride, padding };
        debug_assert_eq!((geom.out_height(), geom.out_width()), (xs[2], xs[3]));
        if let Some(b) = b {
            if self.shape(b) != [out_channels] {
                return Err(Error::shape("transposed_conv2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let (batch, in_channels) = (xs[0], xs[1]);
        let mut out = vec![0.0; batch * geom.image_len()];
        let mut cols = vec![0.0; rows * ncols];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for n in 0..batch {
            let xi = &xd[n * in_channels * ncols..(n + 1) * in_channels * ncols];
            gemm(rows, in_channels, ncols, wd, true, xi, false, &mut cols, false);
            col2im(&geom, &cols, &mut out[n * geom.image_len()..(n + 1) * geom.image_len()]);
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            let plane = ho * wo;
            for (i, v) in out.iter_mut().enumerate() {
                *v += bd[(i / plane) % out_channels];
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let out = Tensor::new(vec![batch, out_channels, ho, wo], out)?;
        self.push(out, Op::ConvTranspose2d { x, w, b, geom, in_channels }, &inputs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.note_kinks(x, 0.0);
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// L1 norm: `Σ |x|`.
    pub fn abs_sum(&mut self, x: Var) -> Result<Var> {
        self.note_kinks(x, 0.0);
        let s = self.value(x).data().iter().map(|v| v.abs()).sum();
        self.push(Tensor::scalar(s), Op::AbsSum(x), &[x])
    }

    /// Squared Euclidean distance. Rank-1 inputs give one distance (shape
    /// `[1]`); higher ranks treat the leading dimension as a batch and give
    /// one distance per row.
    pub fn squared_l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("squared_l2_distance", a, b)?;
        let shape = self.shape(a).to_vec();
        let rows = if shape.len() == 1 { 1 } else { shape[0] };
        let dim = self.value(a).len() / rows;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                ad[r * dim..(r + 1) * dim]
                    .iter()
                    .zip(&bd[r * dim..(r + 1) * dim])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect();
        self.push(Tensor::from_vec(out), Op::SqDist { a, b, dim }, &[a, b])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.note_kinks(x, 0.0);
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.note_kinks(x, 0.0);
        self.unary(x, Op::LeakyRelu { x, slope }, |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// Row-wise log-softmax over the last dimension of a `(B, K)` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("log_softmax", format!("expected (B, K), got {shape:?}")));
        }
        let classes = shape[1];
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(classes) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(Tensor::new(shape, data)?, Op::LogSoftmax { x, classes }, &[x])
    }

    /// Per-sample, per-channel normalization over the spatial plane of an
    /// `(N, C, H, W)` tensor, without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape("instance_norm", format!("expected rank 4, got {shape:?}")));
        }
        let plane = shape[2] * shape[3];
        let mut data = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / plane);
        for p in data.chunks_mut(plane) {
            let mean = p.iter().sum::<f64>() / plane as f64;
            let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            p.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        self.push(Tensor::new(shape, data)?, Op::InstanceNorm { x, plane, inv_std }, &[x])
    }

    /// `max{x, min}` elementwise. At an exact tie the clamp branch is taken,
    /// so the gradient there is zero.
    pub fn clamp_min(&mut self, x: Var, min: f64) -> Result<Var> {
        self.note_kinks(x, min);
        self.unary(x, Op::ClampMin { x, min }, |v| if v > min { v } else { min })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Flattens every dimension after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let lead = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, &[lead, rest])
    }

    /// Rows `start..end` along the leading dimension.
    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).rows(start, end)?;
        self.push(out, Op::Rows { x, start }, &[x])
    }

    /// Picks `x[b, indices[b]]` from a `(B, K)` tensor.
    pub fn select_per_row(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 || shape[0] != indices.len() {
            return Err(Error::shape("select_per_row", format!("{shape:?} with {} indices", indices.len())));
        }
        let k = shape[1];
        if let Some(bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidArgument(format!("class index {bad} out of range for {k} classes")));
        }
        let d = self.value(x).data();
        let out: Vec<f64> = indices.iter().enumerate().map(|(b, &i)| d[b * k + i]).collect();
        self.push(Tensor::from_vec(out), Op::SelectPerRow { x, indices: indices.to_vec() }, &[x])
    }

    /// Divides each row of a `(B, D)` tensor by its Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("l2_normalize_rows", format!("expected (B, D), got {shape:?}")));
        }
        let mut data = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(shape[0]);
        for row in data.chunks_mut(shape[1]) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_NORM_FLOOR);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(Tensor::new(shape, data)?, Op::L2NormalizeRows { x, norms }, &[x])
    }

    /// Reverse pass from a scalar `loss`. Gradients from any earlier call are
    /// discarded, so repeated calls give identical results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes.iter().any(|n| !matches!(n.op, Op::Leaf)) {
            return Err(Error::EmptyTape);
        }
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&mut self, v: Var, delta: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        delta(slot);
    }

    fn acc_map(&mut self, v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.acc(v, |slot| {
            for (i, (s, gi)) in slot.iter_mut().zip(g).enumerate() {
                *s += f(i, *gi);
            }
        });
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The op is moved out so that input values can be borrowed while
        // gradient slots are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_map(*a, g, |_, gi| gi);
                self.acc_map(*b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.acc_map(*a, g, |_, gi| gi);
                self.acc_map(*b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data().to_vec();
                let av = self.value(*a).data().to_vec();
                self.acc_map(*a, g, |j, gi| gi * bv[j]);
                self.acc_map(*b, g, |j, gi| gi * av[j]);
            }
            Op::Affine { x, scale } => self.acc_map(*x, g, |_, gi| gi * scale),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.wants(*a) {
                    let bv = self.value(*b).data().to_vec();
                    self.acc(*a, |s| gemm(m, n, k, g, false, &bv, true, s, true));
                }
                if self.wants(*b) {
                    let av = self.value(*a).data().to_vec();
                    self.acc(*b, |s| gemm(k, m, n, &av, true, g, false, s, true));
                }
            }
            Op::AddBias { x, bias } => {
                self.acc_map(*x, g, |_, gi| gi);
                let shape = self.shape(*x).to_vec();
                let inner: usize = shape[2..].iter().product();
                self.acc(*bias, |s| {
                    for (j, gi) in g.iter().enumerate() {
                        s[(j / inner) % shape[1]] += gi;
                    }
                });
            }
            Op::Conv2d { x, w, b, geom, out_channels, cols } => {
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let oc = *out_channels;
                let batch = self.shape(*x)[0];
                if self.wants(*w) {
                    self.acc(*w, |s| {
                        for n in 0..batch {
                            let gn = &g[n * oc * ncols..(n + 1) * oc * ncols];
                            let cn = &cols[n * rows * ncols..(n + 1) * rows * ncols];
                            gemm(oc, ncols, rows, gn, false, cn, true, s, true);
                        }
                    });
                }
                if let Some(b) = b {
                    self.acc(*b, |s| {
                        for (j, gi) in g.iter().enumerate() {
                            s[(j / ncols) % oc] += gi;
                        }
                    });
                }
                if self.wants(*x) {
                    let wv = self.value(*w).data().to_vec();
                    let geom = *geom;
                    self.acc(*x, |s| {
                        let mut dcols = vec![0.0; rows * ncols];
                        for n in 0..batch {
                            let gn = &g[n * oc * ncols..(n + 1) * oc * ncols];
                            gemm(rows, oc, ncols, &wv, true, gn, false, &mut dcols, false);
                            col2im(&geom, &dcols, &mut s[n * geom.image_len()..(n + 1) * geom.image_len()]);
                        }
                    });
                }
            }
            Op::ConvTranspose2d { x, w, b, geom, in_channels } => {
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let ic = *in_channels;
                let batch = self.shape(*x)[0];
                let geom = *geom;
                let mut gcols = vec![0.0; batch * rows * ncols];
                for n in 0..batch {
                    im2col(
                        &geom,
                        &g[n * geom.image_len()..(n + 1) * geom.image_len()],
                        &mut gcols[n * rows * ncols..(n + 1) * rows * ncols],
                    );
                }
                if self.wants(*w) {
                    let xv = self.value(*x).data().to_vec();
                    self.acc(*w, |s| {
                        for n in 0..batch {
                            let xn = &xv[n * ic * ncols..(n + 1) * ic * ncols];
                            let cn = &gcols[n * rows * ncols..(n + 1) * rows * ncols];
                            gemm(ic, ncols, rows, xn, false, cn, true, s, true);
                        }
                    });
                }
                if let Some(b) = b {
                    let plane = geom.height * geom.width;
                    let oc = geom.channels;
                    self.acc(*b, |s| {
                        for (j, gi) in g.iter().enumerate() {
                            s[(j / plane) % oc] += gi;
                        }
                    });
                }
                if self.wants(*x) {
                    let wv = self.value(*w).data().to_vec();
                    self.acc(*x, |s| {
                        for n in 0..batch {
                            let cn = &gcols[n * rows * ncols..(n + 1) * rows * ncols];
                            let sn = &mut s[n * ic * ncols..(n + 1) * ic * ncols];
                            gemm(ic, rows, ncols, &wv, false, cn, false, sn, true);
                        }
                    });
                }
            }
            Op::Sum(x) => self.acc(*x, |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(*x, |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data().to_vec();
                self.acc_map(*x, g, |j, gi| gi * sign(xv[j]));
            }
            Op::AbsSum(x) => {
                let xv = self.value(*x).data().to_vec();
                self.acc(*x, |s| {
                    for (sj, xj) in s.iter_mut().zip(&xv) {
                        *sj += g[0] * sign(*xj);
                    }
                });
            }
            Op::SqDist { a, b, dim } => {
                let dim = *dim;
                let diff: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| 2.0 * (x - y))
                    .collect();
                self.acc(*a, |s| {
                    for (j, sj) in s.iter_mut().enumerate() {
                        *sj += g[j / dim] * diff[j];
                    }
                });
                self.acc(*b, |s| {
                    for (j, sj) in s.iter_mut().enumerate() {
                        *sj -= g[j / dim] * diff[j];
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.acc_map(*x, g, |j, gi| gi * y[j] * (1.0 - y[j]));
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.acc_map(*x, g, |j, gi| gi * (1.0 - y[j] * y[j]));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data().to_vec();
                self.acc_map(*x, g, |j, gi| if xv[j] > 0.0 { gi } else { 0.0 });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data().to_vec();
                let slope = *slope;
                self.acc_map(*x, g, |j, gi| if xv[j] > 0.0 { gi } else { slope * gi });
            }
            Op::Log(x) => {
                let xv = self.value(*x).data().to_vec();
                self.acc_map(*x, g, |j, gi| gi / xv[j]);
            }
            Op::Exp(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.acc_map(*x, g, |j, gi| gi * y[j]);
            }
            Op::LogSoftmax { x, classes } => {
                let k = *classes;
                let y = self.nodes[i].value.data().to_vec();
                let row_sums: Vec<f64> = g.chunks(k).map(|r| r.iter().sum()).collect();
                self.acc_map(*x, g, |j, gi| gi - y[j].exp() * row_sums[j / k]);
            }
            Op::InstanceNorm { x, plane, inv_std } => {
                let p = *plane;
                let y = self.nodes[i].value.data().to_vec();
                self.acc(*x, |s| {
                    for (c, inv) in inv_std.iter().enumerate() {
                        let r = c * p..(c + 1) * p;
                        let (gs, ys) = (&g[r.clone()], &y[r.clone()]);
                        let sum_g: f64 = gs.iter().sum();
                        let sum_gy: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        let pf = p as f64;
                        for (j, sj) in s[r].iter_mut().enumerate() {
                            *sj += inv / pf * (pf * gs[j] - sum_g - ys[j] * sum_gy);
                        }
                    }
                });
            }
            Op::ClampMin { x, min } => {
                let xv = self.value(*x).data().to_vec();
                let min = *min;
                self.acc_map(*x, g, |j, gi| if xv[j] > min { gi } else { 0.0 });
            }
            Op::Reshape(x) => self.acc_map(*x, g, |_, gi| gi),
            Op::Rows { x, start } => {
                let offset = start * (self.value(*x).len() / self.shape(*x)[0]);
                self.acc(*x, |s| {
                    for (sj, gj) in s[offset..offset + g.len()].iter_mut().zip(g) {
                        *sj += gj;
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let d = self.shape(*x)[1];
                let y = self.nodes[i].value.data().to_vec();
                self.acc(*x, |s| {
                    for (r, n) in norms.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                        for j in span {
                            s[j] += (g[j] - y[j] * dot) / n;
                        }
                    }
                });
            }
            Op::SelectPerRow { x, indices } => {
                let k = self.shape(*x)[1];
                self.acc(*x, |s| {
                    for (b, &t) in indices.iter().enumerate() {
                        s[b * k + t] += g[b];
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
