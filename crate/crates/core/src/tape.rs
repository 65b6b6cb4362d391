//! Define-by-run gradient tape.
//!
//! Operations record themselves as nodes while computing their forward value;
//! `backward` replays the tape in reverse. The tape is rebuilt every training
//! step. Node ids are assigned in creation order, so every node's parents
//! always precede it and a single reverse sweep implements the chain rule.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{strides_of, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    /// Node id, stable for the lifetime of the tape.
    pub fn id(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Matmul(Var, Var),
    Transpose2(Var),
    Reshape(Var),
    Select0(Var, usize),
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Abs(Var),
    Clamp {
        a: Var,
        lo: f64,
        hi: f64,
    },
    Sum(Var),
    Mean(Var),
    AddRowBias(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Upsample2(Var),
    AvgPool2(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
    /// Op-specific saved statistics (instance norm keeps per-plane mean and
    /// inverse std here so backward does not recompute them).
    aux: Vec<f64>,
}

/// The gradient tape. One per forward/backward cycle.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a differentiable leaf (parameters, inputs under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf, Vec::new())
    }

    /// Register a non-differentiable leaf (data, frozen weights, detached values).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf, Vec::new())
    }

    /// Re-register an existing node's value as a fresh constant leaf,
    /// severing it from the recorded history.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of a node, available after `backward` for nodes that
    /// require grad and were reached from the loss.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        self.push_op_aux(value, parents, op, Vec::new())
    }

    fn push_op_aux(&mut self, value: Tensor, parents: &[Var], op: Op, aux: Vec<f64>) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, rg, op, aux)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    // ── Elementwise and scalar ops ──────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        Ok(self.push_op(t, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        Ok(self.push_op(t, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        Ok(self.push_op(t, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::AddScalar(a, c))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.ln()).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.abs()).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x.clamp(lo, hi)).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        self.push_op(t, &[a], Op::Clamp { a, lo, hi })
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s / n), &[a], Op::Mean(a))
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("cannot view {} elements as {:?}", self.value(a).numel(), shape),
            });
        }
        let t = Tensor::from_vec(shape, self.value(a).data().to_vec()).expect("checked");
        Ok(self.push_op(t, &[a], Op::Reshape(a)))
    }

    pub fn transpose2(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose2",
                shape: shape.to_vec(),
                reason: "rank-2 tensor required".into(),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::from_vec(&[c, r], data).expect("checked");
        Ok(self.push_op(t, &[a], Op::Transpose2(a)))
    }

    /// Index along axis 0, dropping that axis.
    pub fn select0(&mut self, a: Var, idx: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if shape.is_empty() || idx >= shape[0] {
            return Err(Error::InvalidShape {
                op: "select0",
                shape,
                reason: format!("index {} out of range", idx),
            });
        }
        let chunk = self.value(a).numel() / shape[0];
        let data = self.value(a).data()[idx * chunk..(idx + 1) * chunk].to_vec();
        let t = Tensor::from_vec(&shape[1..], data).expect("checked");
        Ok(self.push_op(t, &[a], Op::Select0(a, idx)))
    }

    /// Contiguous window `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "narrow",
                shape,
                reason: format!("window {}..{} on axis {}", start, start + len, axis),
            });
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let t = copy_window(self.value(a), &out_shape, axis, start);
        Ok(self.push_op(t, &[a], Op::Narrow { a, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "empty input list".into(),
            });
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut axis_total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let out_row = axis_total * inner;
        let mut offset = 0;
        for &x in xs {
            let len = self.value(x).shape()[axis];
            let src = self.value(x).data();
            for o in 0..outer {
                let dst = &mut data[o * out_row + offset * inner..][..len * inner];
                dst.copy_from_slice(&src[o * len * inner..][..len * inner]);
            }
            offset += len;
        }
        let t = Tensor::from_vec(&out_shape, data).expect("checked");
        Ok(self.push_op(t, xs, Op::Concat { xs: xs.to_vec(), axis }))
    }

    // ── Structured ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::from_vec(&[m, n], data).expect("checked");
        Ok(self.push_op(t, &[a, b], Op::Matmul(a, b)))
    }

    /// `a[..., c] + bias[c]`, broadcasting over all leading axes.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if sa.is_empty() || sb.len() != 1 || sb[0] != *sa.last().unwrap() {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let c = sb[0];
        let mut data = self.value(a).data().to_vec();
        let bvals = self.value(bias).data();
        for row in data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(bvals) {
                *x += b;
            }
        }
        let t = Tensor::from_vec(&sa, data).expect("same shape");
        Ok(self.push_op(t, &[a, bias], Op::AddRowBias(a, bias)))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        if shape[axis] == 0 {
            return Err(Error::InvalidShape {
                op: "softmax",
                shape,
                reason: "empty softmax axis".into(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| o * len * inner + l * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(src[at(l)]);
                }
                let mut z = 0.0;
                for l in 0..len {
                    let e = (src[at(l)] - mx).exp();
                    data[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    data[at(l)] /= z;
                }
            }
        }
        let t = Tensor::from_vec(&shape, data).expect("same shape");
        Ok(self.push_op(t, &[a], Op::Softmax { a, axis }))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        if let Some(b) = bias {
            let sb = self.value(b).shape();
            if sb.len() != 1 || sb[0] != sw[0] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: sw,
                    rhs: sb.to_vec(),
                });
            }
        }
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, pad)
            .ok_or_else(|| Error::InvalidShape {
                op: "conv2d",
                shape: sx.clone(),
                reason: format!("kernel {:?} stride {} pad {} does not fit", sw, stride, pad),
            })?;
        let data = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let t = Tensor::from_vec(&[geom.batch, geom.c_out, geom.oh, geom.ow], data).expect("geom");
        let mut parents = vec![x, w];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.push_op(t, &parents, Op::Conv2d { x, w, bias, geom }))
    }

    /// Instance normalization over `x[n,c,h,w]` with per-channel affine.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::InvalidShape {
                op: "instance_norm",
                shape,
                reason: "rank-4 [n,c,h,w] input required".into(),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if h * w < 2 {
            return Err(Error::InvalidShape {
                op: "instance_norm",
                shape,
                reason: "plane must hold at least 2 elements".into(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::InvalidShape {
                op: "instance_norm",
                shape,
                reason: format!("eps must be positive, got {}", eps),
            });
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.value(v).shape();
            if s != [c] {
                return Err(Error::ShapeMismatch {
                    op: if name == "gamma" {
                        "instance_norm gamma"
                    } else {
                        "instance_norm beta"
                    },
                    lhs: shape.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let m = h * w;
        let src = self.value(x).data();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut data = vec![0.0; src.len()];
        let mut aux = vec![0.0; 2 * n * c];
        for p in 0..n * c {
            let plane = &src[p * m..(p + 1) * m];
            let mean = plane.iter().sum::<f64>() / m as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + eps).sqrt();
            aux[2 * p] = mean;
            aux[2 * p + 1] = istd;
            let (g, b) = (gv[p % c], bv[p % c]);
            for (o, v) in data[p * m..(p + 1) * m].iter_mut().zip(plane) {
                *o = (v - mean) * istd * g + b;
            }
        }
        let t = Tensor::from_vec(&shape, data).expect("same shape");
        Ok(self.push_op_aux(t, &[x, gamma, beta], Op::InstanceNorm { x, gamma, beta }, aux))
    }

    /// Nearest-neighbor upsampling by 2 in both spatial dims.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::InvalidShape {
                op: "upsample2",
                shape,
                reason: "rank-4 [n,c,h,w] input required".into(),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let src = self.value(x).data();
        let mut data = vec![0.0; n * c * 4 * h * w];
        let (oh, ow) = (2 * h, 2 * w);
        for p in 0..n * c {
            let sp = &src[p * h * w..][..h * w];
            let dp = &mut data[p * oh * ow..][..oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    dp[oy * ow + ox] = sp[(oy / 2) * w + ox / 2];
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], data).expect("checked");
        Ok(self.push_op(t, &[x], Op::Upsample2(x)))
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "avg_pool2",
                shape,
                reason: "rank-4 input with even spatial dims required".into(),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut data = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let sp = &src[p * h * w..][..h * w];
            let dp = &mut data[p * oh * ow..][..oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * w + 2 * ox;
                    dp[oy * ow + ox] = 0.25 * (sp[base] + sp[base + 1] + sp[base + w] + sp[base + w + 1]);
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], data).expect("checked");
        Ok(self.push_op(t, &[x], Op::AvgPool2(x)))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates gradients of every
    /// grad-requiring node reachable from `loss`. A tape can only be
    /// backwarded once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(Error::BackwardSpent);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        self.spent = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let (parents, rest) = self.nodes.split_at_mut(id);
            let node = &rest[0];
            let g = node.grad.as_deref().expect("checked above");
            backprop_node(node, g, parents);
        }
        Ok(())
    }
}

/// Accumulate into a parent's gradient buffer if it participates in autodiff.
fn acc<'a>(parents: &'a mut [Node], v: Var) -> Option<&'a mut [f64]> {
    let n = &mut parents[v.0];
    if !n.requires_grad {
        return None;
    }
    if n.grad.is_none() {
        n.grad = Some(vec![0.0; n.value.numel()]);
    }
    n.grad.as_deref_mut()
}

fn backprop_node(node: &Node, g: &[f64], parents: &mut [Node]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(da) = acc(parents, *a) {
                axpy(da, g, 1.0);
            }
            if let Some(db) = acc(parents, *b) {
                axpy(db, g, 1.0);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = acc(parents, *a) {
                axpy(da, g, 1.0);
            }
            if let Some(db) = acc(parents, *b) {
                axpy(db, g, -1.0);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (parents[a.0].value.data().to_vec(), parents[b.0].value.data().to_vec());
            if let Some(da) = acc(parents, *a) {
                for ((d, gi), bi) in da.iter_mut().zip(g).zip(&bv) {
                    *d += gi * bi;
                }
            }
            if let Some(db) = acc(parents, *b) {
                for ((d, gi), ai) in db.iter_mut().zip(g).zip(&av) {
                    *d += gi * ai;
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(da) = acc(parents, *a) {
                axpy(da, g, *c);
            }
        }
        Op::AddScalar(a, _) => {
            if let Some(da) = acc(parents, *a) {
                axpy(da, g, 1.0);
            }
        }
        Op::Matmul(a, b) => {
            let sa = parents[a.0].value.shape().to_vec();
            let sb = parents[b.0].value.shape().to_vec();
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let av = parents[a.0].value.data().to_vec();
            let bv = parents[b.0].value.data().to_vec();
            if parents[a.0].requires_grad {
                // da = g * b^T
                let bt = transpose_buf(&bv, k, n);
                let da_new = kernels::matmul(g, &bt, m, n, k);
                if let Some(da) = acc(parents, *a) {
                    axpy(da, &da_new, 1.0);
                }
            }
            if parents[b.0].requires_grad {
                // db = a^T * g
                let at = transpose_buf(&av, m, k);
                let db_new = kernels::matmul(&at, g, k, m, n);
                if let Some(db) = acc(parents, *b) {
                    axpy(db, &db_new, 1.0);
                }
            }
        }
        Op::Transpose2(a) => {
            let s = node.value.shape();
            let (r, c) = (s[0], s[1]);
            if let Some(da) = acc(parents, *a) {
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = acc(parents, *a) {
                axpy(da, g, 1.0);
            }
        }
        Op::Select0(a, idx) => {
            let chunk = node.value.numel();
            if let Some(da) = acc(parents, *a) {
                axpy(&mut da[idx * chunk..(idx + 1) * chunk], g, 1.0);
            }
        }
        Op::Narrow { a, axis, start } => {
            let out_shape = node.value.shape().to_vec();
            if parents[a.0].requires_grad {
                let in_shape = parents[a.0].value.shape().to_vec();
                let (outer, len, inner) = axis_split(&out_shape, *axis);
                let in_row = in_shape[*axis] * inner;
                if let Some(da) = acc(parents, *a) {
                    for o in 0..outer {
                        let dst = &mut da[o * in_row + start * inner..][..len * inner];
                        axpy(dst, &g[o * len * inner..][..len * inner], 1.0);
                    }
                }
            }
        }
        Op::Concat { xs, axis } => {
            let out_shape = node.value.shape().to_vec();
            let (outer, total, inner) = axis_split(&out_shape, *axis);
            let out_row = total * inner;
            let mut offset = 0;
            for &x in xs {
                let len = parents[x.0].value.shape()[*axis];
                if let Some(dx) = acc(parents, x) {
                    for o in 0..outer {
                        let src = &g[o * out_row + offset * inner..][..len * inner];
                        axpy(&mut dx[o * len * inner..][..len * inner], src, 1.0);
                    }
                }
                offset += len;
            }
        }
        Op::Softmax { a, axis } => {
            let shape = node.value.shape().to_vec();
            let y = node.value.data();
            let (outer, len, inner) = axis_split(&shape, *axis);
            if let Some(da) = acc(parents, *a) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let mut dot = 0.0;
                        for l in 0..len {
                            dot += g[at(l)] * y[at(l)];
                        }
                        for l in 0..len {
                            da[at(l)] += y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let x = parents[a.0].value.data().to_vec();
            if let Some(da) = acc(parents, *a) {
                for ((d, gi), xi) in da.iter_mut().zip(g).zip(&x) {
                    *d += gi * if *xi > 0.0 { 1.0 } else { *slope };
                }
            }
        }
        Op::Sigmoid(_) | Op::Tanh(_) => {
            let y = node.value.data();
            let is_sigmoid = matches!(node.op, Op::Sigmoid(_));
            let a = match &node.op {
                Op::Sigmoid(a) | Op::Tanh(a) => *a,
                _ => unreachable!(),
            };
            let y = y.to_vec();
            if let Some(da) = acc(parents, a) {
                for ((d, gi), yi) in da.iter_mut().zip(g).zip(&y) {
                    *d += gi * if is_sigmoid { yi * (1.0 - yi) } else { 1.0 - yi * yi };
                }
            }
        }
        Op::Log(a) => {
            let x = parents[a.0].value.data().to_vec();
            if let Some(da) = acc(parents, *a) {
                for ((d, gi), xi) in da.iter_mut().zip(g).zip(&x) {
                    *d += gi / xi;
                }
            }
        }
        Op::Abs(a) => {
            let x = parents[a.0].value.data().to_vec();
            if let Some(da) = acc(parents, *a) {
                for ((d, gi), xi) in da.iter_mut().zip(g).zip(&x) {
                    *d += gi * if *xi > 0.0 {
                        1.0
                    } else if *xi < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
        }
        Op::Clamp { a, lo, hi } => {
            let x = parents[a.0].value.data().to_vec();
            if let Some(da) = acc(parents, *a) {
                for ((d, gi), xi) in da.iter_mut().zip(g).zip(&x) {
                    if *xi > *lo && *xi < *hi {
                        *d += gi;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(da) = acc(parents, *a) {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean(a) => {
            let n = parents[a.0].value.numel() as f64;
            if let Some(da) = acc(parents, *a) {
                for d in da.iter_mut() {
                    *d += g[0] / n;
                }
            }
        }
        Op::AddRowBias(a, bias) => {
            if let Some(da) = acc(parents, *a) {
                axpy(da, g, 1.0);
            }
            let c = parents[bias.0].value.numel();
            if let Some(db) = acc(parents, *bias) {
                for row in g.chunks(c) {
                    for (d, gi) in db.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
            }
        }
        Op::Conv2d { x, w, bias, geom } => {
            let xv = parents[x.0].value.data().to_vec();
            let wv = parents[w.0].value.data().to_vec();
            if parents[x.0].requires_grad {
                let dx_new = kernels::conv2d_dx(g, &wv, geom);
                if let Some(dx) = acc(parents, *x) {
                    axpy(dx, &dx_new, 1.0);
                }
            }
            let need_dw = parents[w.0].requires_grad;
            let need_db = bias.map(|b| parents[b.0].requires_grad).unwrap_or(false);
            if need_dw || need_db {
                let (dw_new, db_new) = kernels::conv2d_dw_db(g, &xv, geom);
                if need_dw {
                    if let Some(dw) = acc(parents, *w) {
                        axpy(dw, &dw_new, 1.0);
                    }
                }
                if need_db {
                    if let Some(db) = acc(parents, bias.expect("need_db")) {
                        axpy(db, &db_new, 1.0);
                    }
                }
            }
        }
        Op::InstanceNorm { x, gamma, beta } => {
            let shape = node.value.shape().to_vec();
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let m = h * w;
            let xv = parents[x.0].value.data().to_vec();
            let gv = parents[gamma.0].value.data().to_vec();
            let aux = &node.aux;
            // gamma/beta grads
            if parents[gamma.0].requires_grad {
                let mut dg = vec![0.0; c];
                for p in 0..n * c {
                    let (mean, istd) = (aux[2 * p], aux[2 * p + 1]);
                    let xs = &xv[p * m..(p + 1) * m];
                    let gs = &g[p * m..(p + 1) * m];
                    let mut s = 0.0;
                    for (xi, gi) in xs.iter().zip(gs) {
                        s += gi * (xi - mean) * istd;
                    }
                    dg[p % c] += s;
                }
                if let Some(dgam) = acc(parents, *gamma) {
                    axpy(dgam, &dg, 1.0);
                }
            }
            if parents[beta.0].requires_grad {
                let mut db = vec![0.0; c];
                for p in 0..n * c {
                    db[p % c] += g[p * m..(p + 1) * m].iter().sum::<f64>();
                }
                if let Some(dbeta) = acc(parents, *beta) {
                    axpy(dbeta, &db, 1.0);
                }
            }
            if parents[x.0].requires_grad {
                let mut dx_new = vec![0.0; xv.len()];
                for p in 0..n * c {
                    let (mean, istd) = (aux[2 * p], aux[2 * p + 1]);
                    let gamma_c = gv[p % c];
                    let xs = &xv[p * m..(p + 1) * m];
                    let gs = &g[p * m..(p + 1) * m];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for (xi, gi) in xs.iter().zip(gs) {
                        let xhat = (xi - mean) * istd;
                        let dxhat = gi * gamma_c;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let inv_m = 1.0 / m as f64;
                    for ((d, xi), gi) in dx_new[p * m..(p + 1) * m].iter_mut().zip(xs).zip(gs) {
                        let xhat = (xi - mean) * istd;
                        let dxhat = gi * gamma_c;
                        *d = istd * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
                    }
                }
                if let Some(dx) = acc(parents, *x) {
                    axpy(dx, &dx_new, 1.0);
                }
            }
        }
        Op::Upsample2(x) => {
            let s = node.value.shape().to_vec();
            let (n, c, oh, ow) = (s[0], s[1], s[2], s[3]);
            let (h, w) = (oh / 2, ow / 2);
            if let Some(dx) = acc(parents, *x) {
                for p in 0..n * c {
                    let gp = &g[p * oh * ow..][..oh * ow];
                    let dp = &mut dx[p * h * w..][..h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dp[(oy / 2) * w + ox / 2] += gp[oy * ow + ox];
                        }
                    }
                }
            }
        }
        Op::AvgPool2(x) => {
            let s = node.value.shape().to_vec();
            let (n, c, oh, ow) = (s[0], s[1], s[2], s[3]);
            let (h, w) = (oh * 2, ow * 2);
            if let Some(dx) = acc(parents, *x) {
                for p in 0..n * c {
                    let gp = &g[p * oh * ow..][..oh * ow];
                    let dp = &mut dx[p * h * w..][..h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = 0.25 * gp[oy * ow + ox];
                            let base = 2 * oy * w + 2 * ox;
                            dp[base] += gv;
                            dp[base + 1] += gv;
                            dp[base + w] += gv;
                            dp[base + w + 1] += gv;
                        }
                    }
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn transpose_buf(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn copy_window(t: &Tensor, out_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, len, inner) = axis_split(out_shape, axis);
    let in_row = t.shape()[axis] * inner;
    let src = t.data();
    let mut data = vec![0.0; out_shape.iter().product()];
    for o in 0..outer {
        data[o * len * inner..][..len * inner]
            .copy_from_slice(&src[o * in_row + start * inner..][..len * inner]);
    }
    Tensor::from_vec(out_shape, data).expect("window shape")
}

#[allow(dead_code)]
fn unused_strides_guard() {
    // strides_of is part of the tensor API surface used by tests and tools.
    let _ = strides_of(&[1]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], vec![0.0, 0.0, 0.0]);
        let y = tape.softmax(x, 0).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_element_is_one() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], vec![4.2]);
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0]);
    }

    #[test]
    fn softmax_two_logits_closed_form() {
        // softmax([1,2]) = [1/(1+e), e/(1+e)]
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let y = tape.softmax(x, 0).unwrap();
        let e = std::f64::consts::E;
        assert!((tape.value(y).data()[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((tape.value(y).data()[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((tape.value(y).data()[0] - 0.26894).abs() < 1e-5);
        assert!((tape.value(y).data()[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_shift_invariance_and_row_sums() {
        let vals: Vec<f64> = (0..24).map(|i| ((i * 37 % 17) as f64) * 0.3 - 2.0).collect();
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[4, 6], vals.clone());
        let sa = tape.softmax(a, 1).unwrap();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 123.456).collect();
        let b = leaf(&mut tape, &[4, 6], shifted);
        let sb = tape.softmax(b, 1).unwrap();
        for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((x - y).abs() < 1e-9);
        }
        for row in tape.value(sa).data().chunks(6) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn softmax_empty_axis_rejected() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 0], vec![]);
        assert!(tape.softmax(x, 1).is_err());
        let y = leaf(&mut tape, &[2], vec![0.0, 1.0]);
        assert!(tape.softmax(y, 3).is_err());
    }

    #[test]
    fn leaky_relu_closed_form() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![-1.0, 3.0]);
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 3.0]);
    }

    #[test]
    fn instance_norm_constant_plane_goes_to_beta() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 2, 2], vec![5.0; 4]);
        let gamma = leaf(&mut tape, &[1], vec![1.0]);
        let beta = leaf(&mut tape, &[1], vec![0.0]);
        let y = tape.instance_norm(x, gamma, beta, 1e-6).unwrap();
        for v in tape.value(y).data() {
            assert!(v.abs() < 1e-3, "constant plane should normalize to ~0, got {}", v);
        }
    }

    #[test]
    fn instance_norm_two_values_closed_form() {
        // plane {1,3}: mean 2, population std 1 -> {-1,+1} as eps -> 0
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 1, 2], vec![1.0, 3.0]);
        let gamma = leaf(&mut tape, &[1], vec![1.0]);
        let beta = leaf(&mut tape, &[1], vec![0.0]);
        let y = tape.instance_norm(x, gamma, beta, 1e-12).unwrap();
        assert!((tape.value(y).data()[0] + 1.0).abs() < 1e-6);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn instance_norm_zero_gamma_broadcasts_beta() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2, 2, 2], (0..8).map(|i| i as f64).collect());
        let gamma = leaf(&mut tape, &[2], vec![0.0, 0.0]);
        let beta = leaf(&mut tape, &[2], vec![7.0, -3.0]);
        let y = tape.instance_norm(x, gamma, beta, 1e-6).unwrap();
        assert_eq!(&tape.value(y).data()[..4], &[7.0; 4]);
        assert_eq!(&tape.value(y).data()[4..], &[-3.0; 4]);
    }

    #[test]
    fn instance_norm_normalizes_mean_and_variance() {
        let vals: Vec<f64> = (0..32).map(|i| ((i * 53 % 29) as f64) * 0.5 - 4.0).collect();
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2, 4, 4], vals);
        let gamma = leaf(&mut tape, &[2], vec![1.0, 1.0]);
        let beta = leaf(&mut tape, &[2], vec![0.0, 0.0]);
        let y = tape.instance_norm(x, gamma, beta, 1e-9).unwrap();
        for plane in tape.value(y).data().chunks(16) {
            let mean: f64 = plane.iter().sum::<f64>() / 16.0;
            let var: f64 = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn instance_norm_rejects_non_4d() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 2], vec![0.0; 4]);
        let gamma = leaf(&mut tape, &[2], vec![1.0, 1.0]);
        let beta = leaf(&mut tape, &[2], vec![0.0, 0.0]);
        assert!(tape.instance_norm(x, gamma, beta, 1e-6).is_err());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_sum_of_squares_gives_2x() {
        let vals = vec![1.0, -2.0, 0.5, 3.0];
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], vals.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        for (gi, xi) in g.iter().zip(&vals) {
            assert!((gi - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_l1_gives_sign_over_numel() {
        // mean(|a-b|) w.r.t. a is sign(a-b)/numel, with sign(0) = 0.
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[4], vec![1.0, -1.0, 2.0, 5.0]);
        let b = leaf(&mut tape, &[4], vec![0.0, 1.0, 2.0, 7.0]);
        let d = tape.sub(a, b).unwrap();
        let ad = tape.abs(d);
        let loss = tape.mean(ad);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.25, -0.25, 0.0, -0.25]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::BackwardSpent)));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let c = tape.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let y = tape.scale(x, 3.0);
        let d = tape.detach(y);
        let loss = tape.sum(d);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.value(d).data(), tape.value(y).data());
    }

    #[test]
    fn matmul_identity_and_shape_error() {
        let mut tape = Tape::new();
        let eye = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let m = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), tape.value(m).data());
        let bad = leaf(&mut tape, &[3, 2], vec![0.0; 6]);
        let err = tape.matmul(m, bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 2]") && msg.contains("[3, 2]"), "{}", msg);
    }

    #[test]
    fn concat_and_narrow_roundtrip() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, &[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let cat = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 5]);
        assert_eq!(
            tape.value(cat).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]
        );
        let back = tape.narrow(cat, 1, 2, 3).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(b).data());
        let loss = tape.sum(back);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[1.0; 6]);
        assert_eq!(tape.grad(a).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn forward_determinism_is_bit_exact() {
        let run = || {
            let mut tape = Tape::new();
            let x = leaf(
                &mut tape,
                &[1, 2, 4, 4],
                (0..32).map(|i| (i as f64 * 0.37).sin()).collect(),
            );
            let w = leaf(
                &mut tape,
                &[3, 2, 3, 3],
                (0..54).map(|i| (i as f64 * 0.11).cos()).collect(),
            );
            let gamma = leaf(&mut tape, &[3], vec![1.1, 0.9, 1.0]);
            let beta = leaf(&mut tape, &[3], vec![0.1, -0.1, 0.0]);
            let c = tape.conv2d(x, w, None, 1, 1).unwrap();
            let n = tape.instance_norm(c, gamma, beta, 1e-6).unwrap();
            let r = tape.leaky_relu(n, 0.2);
            tape.value(r).data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn upsample_and_avgpool_are_adjoint_shapes() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let up = tape.upsample2(x).unwrap();
        assert_eq!(tape.value(up).shape(), &[1, 1, 4, 4]);
        let down = tape.avg_pool2(up).unwrap();
        assert_eq!(tape.value(down).data(), tape.value(x).data());
        let loss = tape.sum(down);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }
}
