//! Dynamic tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value, so node indices are a
//! topological order: parents always precede children. `backward` walks the
//! tape once in reverse, skipping nodes that no trainable leaf feeds into.

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Log arguments are clamped below at this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Vectors with a norm under this value are degenerate for cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Param,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    BiasAdd(Var, Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax { input: Var, axis: usize },
    Log(Var),
    Sum(Var),
    Mean(Var),
    UpsampleNearest(Var, usize),
    FlattenConcat(Vec<Var>),
    StopGradient(Var),
    CosineSimilarity(Var, Var),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Param => "param",
            OpKind::Constant => "constant",
            OpKind::Add(..) => "add",
            OpKind::Sub(..) => "sub",
            OpKind::Mul(..) => "mul",
            OpKind::Scale(..) => "scale",
            OpKind::AddScalar(..) => "add_scalar",
            OpKind::MatMul(..) => "matmul",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::BiasAdd(..) => "bias_add",
            OpKind::LeakyRelu(..) => "leaky_relu",
            OpKind::Relu(..) => "relu",
            OpKind::Sigmoid(..) => "sigmoid",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Log(..) => "log",
            OpKind::Sum(..) => "sum",
            OpKind::Mean(..) => "mean",
            OpKind::UpsampleNearest(..) => "upsample_nearest",
            OpKind::FlattenConcat(..) => "flatten_concat",
            OpKind::StopGradient(..) => "stop_gradient",
            OpKind::CosineSimilarity(..) => "cosine_similarity",
        }
    }
}

/// One recorded value on the tape.
#[derive(Clone, Debug)]
pub struct TapeNode {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub op: OpKind,
    requires_grad: bool,
}

impl TapeNode {
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<TapeNode>,
    backward_done: bool,
    fault: Option<&'static str>,
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: backward negates the gradient flowing out of every node
    /// whose op has this name. Used to prove the gradient checker catches
    /// a wrong derivative.
    #[doc(hidden)]
    pub fn inject_sign_fault(&mut self, op_name: &'static str) {
        self.fault = Some(op_name);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, OpKind::Param, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, OpKind::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: OpKind, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "{} produced a non-finite value", op.name());
        self.nodes.push(TapeNode {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: OpKind, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.derived(out, OpKind::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.derived(out, OpKind::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.derived(out, OpKind::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.derived(out, OpKind::Scale(a, k), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.derived(out, OpKind::AddScalar(a, k), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: av.shape().to_vec(),
                    rhs: bv.shape().to_vec(),
                })
            }
        };
        let mut out = vec![0.0; m * n];
        conv::matmul(m, k, n, av.data(), bv.data(), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(out, OpKind::MatMul(a, b), &[a, b]))
    }

    fn conv_geom(&self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<ConvGeom> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            lhs: iv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        };
        let [n, cin, h, w] = iv.dims4().map_err(|_| mismatch())?;
        let &[cout, kcin, kh, kw] = kv.shape() else {
            return Err(mismatch());
        };
        if kcin != cin || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(mismatch());
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
        })
    }

    /// 2-D cross-correlation of `[N,C,H,W]` input with a `[Cout,C,kh,kw]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let g = self.conv_geom(input, kernel, stride, padding)?;
        let data = conv::conv2d_forward(&g, self.value(input).data(), self.value(kernel).data());
        let (ho, wo) = g.out_hw();
        let out = Tensor::new(vec![g.n, g.cout, ho, wo], data)?;
        Ok(self.derived(
            out,
            OpKind::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            &[input, kernel],
        ))
    }

    /// Adds a per-channel bias `[C]` to an `[N,C,H,W]` map.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let [n, c, h, w] = xv.dims4()?;
        if bv.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let plane = h * w;
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let bias_v = bv.data()[ch];
                for v in &mut out.data_mut()[off..off + plane] {
                    *v += bias_v;
                }
            }
        }
        Ok(self.derived(out, OpKind::BiasAdd(x, bias), &[x, bias]))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { alpha * v });
        self.derived(out, OpKind::LeakyRelu(x, alpha), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.derived(out, OpKind::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.derived(out, OpKind::Sigmoid(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", xv.shape()),
            ));
        }
        let out = softmax_forward(xv, axis);
        Ok(self.derived(out, OpKind::Softmax { input: x, axis }, &[x]))
    }

    /// Natural log with the argument clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(LOG_FLOOR).ln());
        self.derived(out, OpKind::Log(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.derived(out, OpKind::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.derived(out, OpKind::Mean(x), &[x])
    }

    /// Nearest-neighbour upsampling of the last two axes by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xv = self.value(x);
        if factor == 0 || xv.ndim() < 2 {
            return Err(Error::invalid(
                "upsample_nearest",
                format!("factor {factor} on shape {:?}", xv.shape()),
            ));
        }
        let out = upsample_forward(xv, factor);
        Ok(self.derived(out, OpKind::UpsampleNearest(x, factor), &[x]))
    }

    pub fn flatten_concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("flatten_concat", "no inputs"));
        }
        let data: Vec<f64> = xs.iter().flat_map(|&v| self.value(v).data().iter().copied()).collect();
        let out = Tensor::from_vec(data);
        Ok(self.derived(out, OpKind::FlattenConcat(xs.to_vec()), xs))
    }

    /// Identity in the forward pass; blocks all gradient to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.value(x).clone();
        self.push(out, OpKind::StopGradient(x), false)
    }

    /// Cosine similarity of two equal-length vectors. Degenerate inputs
    /// (norm below [`NORM_FLOOR`]) yield 0 with zero gradient.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let c = cosine(self.value(a), self.value(b))?;
        Ok(self.derived(Tensor::scalar(c.value), OpKind::CosineSimilarity(a, b), &[a, b]))
    }

    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Populates `grad` for every node on a path from a trainable leaf to `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let root_shape = self.value(root).shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Tensor::ones(&root_shape));
        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if self.fault == Some(op.name()) {
                self.propagate(i, &op, &g.map(|v| -v))?;
            } else {
                self.propagate(i, &op, &g)?;
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, op: &OpKind, g: &Tensor) -> Result<()> {
        match *op {
            OpKind::Param | OpKind::Constant | OpKind::StopGradient(_) => {}
            OpKind::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            OpKind::Sub(a, b) => {
                self.accumulate(a, g.clone());
                if self.wants(b) {
                    self.accumulate(b, g.map(|v| -v));
                }
            }
            OpKind::Mul(a, b) => {
                if self.wants(a) {
                    let ga = g.zip_map(self.value(b), "mul", |x, y| x * y)?;
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let gb = g.zip_map(self.value(a), "mul", |x, y| x * y)?;
                    self.accumulate(b, gb);
                }
            }
            OpKind::Scale(a, k) => self.accumulate(a, g.map(|v| v * k)),
            OpKind::AddScalar(a, _) => self.accumulate(a, g.clone()),
            OpKind::MatMul(a, b) => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                if self.wants(a) {
                    let mut ga = vec![0.0; m * k];
                    conv::matmul_bt_acc(m, n, k, g.data(), self.value(b).data(), &mut ga);
                    self.accumulate(a, Tensor::new(vec![m, k], ga)?);
                }
                if self.wants(b) {
                    let mut gb = vec![0.0; k * n];
                    conv::matmul_at_acc(k, m, n, self.value(a).data(), g.data(), &mut gb);
                    self.accumulate(b, Tensor::new(vec![k, n], gb)?);
                }
            }
            OpKind::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let geom = self.conv_geom(input, kernel, stride, padding)?;
                let (gi, gk) = conv::conv2d_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    g.data(),
                    self.wants(input),
                    self.wants(kernel),
                );
                if let Some(gi) = gi {
                    let shape = self.value(input).shape().to_vec();
                    self.accumulate(input, Tensor::new(shape, gi)?);
                }
                if let Some(gk) = gk {
                    let shape = self.value(kernel).shape().to_vec();
                    self.accumulate(kernel, Tensor::new(shape, gk)?);
                }
            }
            OpKind::BiasAdd(x, bias) => {
                self.accumulate(x, g.clone());
                if self.wants(bias) {
                    let [n, c, h, w] = g.dims4()?;
                    let plane = h * w;
                    let mut gb = vec![0.0; c];
                    for b in 0..n {
                        for (ch, slot) in gb.iter_mut().enumerate() {
                            let off = (b * c + ch) * plane;
                            *slot += g.data()[off..off + plane].iter().sum::<f64>();
                        }
                    }
                    self.accumulate(bias, Tensor::from_vec(gb));
                }
            }
            OpKind::LeakyRelu(x, alpha) => {
                let gx = self.value(x).zip_map(g, "leaky_relu", |v, d| if v > 0.0 { d } else { alpha * d })?;
                self.accumulate(x, gx);
            }
            OpKind::Relu(x) => {
                let gx = self.value(x).zip_map(g, "relu", |v, d| if v > 0.0 { d } else { 0.0 })?;
                self.accumulate(x, gx);
            }
            OpKind::Sigmoid(x) => {
                let gx = self.nodes[i].value.zip_map(g, "sigmoid", |s, d| d * s * (1.0 - s))?;
                self.accumulate(x, gx);
            }
            OpKind::Softmax { input, axis } => {
                let y = &self.nodes[i].value;
                let (outer, dim, inner) = axis_split(y.shape(), axis);
                let mut gx = vec![0.0; y.len()];
                let (yd, gd) = (y.data(), g.data());
                for o in 0..outer {
                    for n in 0..inner {
                        let base = o * dim * inner + n;
                        let dot: f64 = (0..dim).map(|c| yd[base + c * inner] * gd[base + c * inner]).sum();
                        for c in 0..dim {
                            let j = base + c * inner;
                            gx[j] = yd[j] * (gd[j] - dot);
                        }
                    }
                }
                let shape = y.shape().to_vec();
                self.accumulate(input, Tensor::new(shape, gx)?);
            }
            OpKind::Log(x) => {
                let gx = self
                    .value(x)
                    .zip_map(g, "log", |v, d| if v > LOG_FLOOR { d / v } else { 0.0 })?;
                self.accumulate(x, gx);
            }
            OpKind::Sum(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(x, Tensor::full(&shape, g.item()));
            }
            OpKind::Mean(x) => {
                let xv = self.value(x);
                let shape = xv.shape().to_vec();
                let n = xv.len() as f64;
                self.accumulate(x, Tensor::full(&shape, g.item() / n));
            }
            OpKind::UpsampleNearest(x, factor) => {
                let shape = self.value(x).shape().to_vec();
                let gx = upsample_backward(g, &shape, factor);
                self.accumulate(x, gx);
            }
            OpKind::FlattenConcat(ref xs) => {
                let mut off = 0;
                for &x in xs {
                    let shape = self.value(x).shape().to_vec();
                    let n = self.value(x).len();
                    if self.wants(x) {
                        let part = Tensor::new(shape, g.data()[off..off + n].to_vec())?;
                        self.accumulate(x, part);
                    }
                    off += n;
                }
            }
            OpKind::CosineSimilarity(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let c = cosine(av, bv)?;
                if c.degenerate {
                    return Ok(());
                }
                let d = g.item();
                let (na, nb) = (c.norm_a, c.norm_b);
                let ga = av.zip_map(bv, "cosine_similarity", |x, y| d * (y / (na * nb) - c.value * x / (na * na)))?;
                let gb = bv.zip_map(av, "cosine_similarity", |y, x| d * (x / (na * nb) - c.value * y / (nb * nb)))?;
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_forward(x: &Tensor, axis: usize) -> Tensor {
    let (outer, dim, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for n in 0..inner {
            let base = o * dim * inner + n;
            let max = (0..dim).map(|c| xd[base + c * inner]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..dim {
                let e = (xd[base + c * inner] - max).exp();
                out[base + c * inner] = e;
                z += e;
            }
            for c in 0..dim {
                out[base + c * inner] /= z;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

fn upsample_forward(x: &Tensor, f: usize) -> Tensor {
    let nd = x.ndim();
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let planes = x.len() / (h * w);
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                out[(p * ho + oy) * wo + ox] = x.data()[(p * h + oy / f) * w + ox / f];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = ho;
    shape[nd - 1] = wo;
    Tensor::new(shape, out).expect("upsample shape")
}

fn upsample_backward(g: &Tensor, in_shape: &[usize], f: usize) -> Tensor {
    let nd = in_shape.len();
    let (h, w) = (in_shape[nd - 2], in_shape[nd - 1]);
    let planes = in_shape.iter().product::<usize>() / (h * w);
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                out[(p * h + oy / f) * w + ox / f] += g.data()[(p * ho + oy) * wo + ox];
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("upsample grad shape")
}

/// Result of a cosine-similarity evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    /// Set when either norm is below [`NORM_FLOOR`]; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine(a: &Tensor, b: &Tensor) -> Result<Cosine> {
    let dot = a.dot(b).map_err(|_| Error::ShapeMismatch {
        op: "cosine_similarity",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let (norm_a, norm_b) = (a.norm(), b.norm());
    if norm_a < NORM_FLOOR || norm_b < NORM_FLOOR {
        return Ok(Cosine {
            value: 0.0,
            norm_a,
            norm_b,
            degenerate: true,
        });
    }
    let sq = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
    Ok(Cosine {
        // sqrt of the product keeps cos(a, a) exactly 1.
        value: (dot / (sq(a) * sq(b)).sqrt()).clamp(-1.0, 1.0),
        norm_a,
        norm_b,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 4, 2, 2], 3.7));
        let p = g.softmax(x, 1).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(y).item(), -0.2);
    }

    #[test]
    fn upsample_replicates_single_pixel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![0.37]).unwrap());
        let y = g.upsample_nearest(x, 4).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn sum_and_mean_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));

        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[5]));
        let m = g.mean(x);
        g.backward(m).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[3]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
        g.reset_grads();
        g.backward(s).unwrap();
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[3]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.param(Tensor::ones(&[2, 3]));
        let b = g.param(Tensor::ones(&[3, 2]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.5, -0.5]));
        let s = g.stop_gradient(x);
        assert_eq!(g.value(s), g.value(x));
        let y = g.mul(s, x).unwrap();
        let r = g.sum(y);
        g.backward(r).unwrap();
        // only the direct path contributes: d/dx (c * x) = c
        assert_eq!(g.grad(x).unwrap().data(), &[1.5, -0.5]);
        assert!(g.grad(s).is_none());
    }

    #[test]
    fn log_clamps_non_positive() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![0.0, -1.0, 1.0]));
        let y = g.log(x);
        assert_eq!(g.value(y).data()[0], LOG_FLOOR.ln());
        assert!(g.value(y).is_finite());
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cosine_special_cases() {
        let a = Tensor::from_vec(vec![1.0, 2.0, -0.5]);
        let c = |x: &Tensor, y: &Tensor| cosine(x, y).unwrap();
        assert!((c(&a, &a).value - 1.0).abs() < 1e-15);
        assert!((c(&a, &a.map(|v| -v)).value + 1.0).abs() < 1e-15);
        let e1 = Tensor::from_vec(vec![1.0, 0.0]);
        let e2 = Tensor::from_vec(vec![0.0, 3.0]);
        assert_eq!(c(&e1, &e2).value, 0.0);
        let z = Tensor::zeros(&[2]);
        let d = c(&e1, &z);
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
    }
}
