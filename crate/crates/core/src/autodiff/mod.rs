//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records operations as they are built and computes their values
//! eagerly. The recorded tape can be re-run with new input bindings through
//! [`Graph::evaluate`], and differentiated with [`Graph::backward`].

pub mod kernels;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding policy for [`Graph::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, weights: Vec<f64> },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, pad: usize },
    MaxPool2(NodeId),
    Reshape(NodeId),
    SliceLast { a: NodeId, start: usize },
    SelectStep { a: NodeId, t: usize },
    Stack(Vec<NodeId>),
    RowNorm { a: NodeId, squared: bool },
    Sum(NodeId),
    Mean(NodeId),
    GridSample { img: NodeId, theta: NodeId },
    FrameTransform { t: NodeId, x: NodeId },
    Dehomogenize(NodeId),
    Euclidean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2(_) => "maxpool2",
            Op::Reshape(_) => "reshape",
            Op::SliceLast { .. } => "slice_last",
            Op::SelectStep { .. } => "select_step",
            Op::Stack(_) => "stack",
            Op::RowNorm { .. } => "row_norm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::GridSample { .. } => "grid_sample",
            Op::FrameTransform { .. } => "frame_transform",
            Op::Dehomogenize(_) => "dehomogenize",
            Op::Euclidean(_) => "euclidean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    /// argmax indices for max pooling
    aux: Vec<usize>,
}

/// Recorded computation. Node order is always a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, NodeId>,
    params: Vec<(String, NodeId)>,
    evaluated: bool,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0).and_then(|g| g.as_deref())
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, v) in orow.iter_mut().zip(row) {
            *o = libm::exp(v - m);
            s += *o;
        }
        orow.iter_mut().for_each(|o| *o /= s);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { evaluated: true, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    pub fn param_ids(&self) -> &[(String, NodeId)] {
        &self.params
    }

    fn push_leaf(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad, aux: Vec::new() });
        id
    }

    /// Named input bound to `value`; rebinding happens in [`Graph::evaluate`].
    pub fn input(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push_leaf(Op::Input, value, false);
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// Named input of known shape without a value; the graph must be
    /// evaluated before it can be differentiated.
    pub fn placeholder(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.evaluated = false;
        self.input(name, Tensor::zeros(shape))
    }

    /// Trainable leaf. Gradients are reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push_leaf(Op::Param, value, true);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Constant, value, false)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let (value, aux) = self.compute(&op)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = self.deps(&op).iter().any(|d| self.nodes[d.0].needs_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad, aux });
        Ok(id)
    }

    fn deps(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Input | Op::Param | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::GridSample { img, theta } => vec![*img, *theta],
            Op::FrameTransform { t, x } => vec![*t, *x],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Stack(parts) => parts.clone(),
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::MaxPool2(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Dehomogenize(a)
            | Op::Euclidean(a) => vec![*a],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SliceLast { a, .. } | Op::SelectStep { a, .. } | Op::RowNorm { a, .. } => vec![*a],
        }
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.v(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape(), data).expect("same shape")
    }

    fn zip(&self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.v(a), self.v(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    /// Forward computation of a single op from the current values of its inputs.
    /// Reshape and SliceLast reuse the node's previously recorded output shape.
    fn compute_with_shape(&self, op: &Op, out_shape: Option<&[usize]>) -> Result<(Tensor, Vec<usize>)> {
        let t = match op {
            Op::Input | Op::Param | Op::Constant => unreachable!("leaves are not computed"),
            Op::Add(a, b) => self.zip("add", *a, *b, |x, y| x + y)?,
            Op::Sub(a, b) => self.zip("sub", *a, *b, |x, y| x - y)?,
            Op::Mul(a, b) => self.zip("mul", *a, *b, |x, y| x * y)?,
            Op::Scale(a, c) => {
                let c = *c;
                self.map(*a, |x| x * c)
            }
            Op::AddBias(a, b) => {
                let (ta, tb) = (self.v(*a), self.v(*b));
                let k = last_dim(ta);
                if tb.len() != k {
                    return Err(mismatch("add_bias", format!("{:?} + bias {:?}", ta.shape(), tb.shape())));
                }
                let mut data = ta.data().to_vec();
                for row in data.chunks_mut(k) {
                    row.iter_mut().zip(tb.data()).for_each(|(x, b)| *x += b);
                }
                Tensor::new(ta.shape(), data)?
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.v(*a), self.v(*b));
                if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
                    return Err(mismatch("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
                }
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut out = vec![0.0; m * n];
                kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
                Tensor::new(&[m, n], out)?
            }
            Op::Sigmoid(a) => self.map(*a, sigmoid),
            Op::Tanh(a) => self.map(*a, libm::tanh),
            Op::Relu(a) => self.map(*a, |x| if x > 0.0 { x } else { 0.0 }),
            Op::Softmax(a) => {
                let ta = self.v(*a);
                Tensor::new(ta.shape(), softmax_rows(ta.data(), last_dim(ta)))?
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let tl = self.v(*logits);
                if tl.shape().len() != 2 {
                    return Err(mismatch("cross_entropy", format!("logits {:?} must be 2-D", tl.shape())));
                }
                let (n, k) = (tl.shape()[0], tl.shape()[1]);
                if targets.len() != n || weights.len() != n {
                    return Err(mismatch(
                        "cross_entropy",
                        format!("{n} rows, {} targets, {} weights", targets.len(), weights.len()),
                    ));
                }
                if let Some(&bad) = targets.iter().find(|&&c| c >= k) {
                    return Err(mismatch("cross_entropy", format!("class {bad} out of {k}")));
                }
                let mut total = 0.0;
                for ((row, &c), &w) in tl.data().chunks(k).zip(targets).zip(weights) {
                    if w == 0.0 {
                        continue;
                    }
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + libm::log(row.iter().map(|x| libm::exp(x - m)).sum::<f64>());
                    total += w * (lse - row[c]);
                }
                Tensor::scalar(total / n as f64)
            }
            Op::Conv2d { x, w, b, pad } => {
                let (tx, tw, tb) = (self.v(*x), self.v(*w), self.v(*b));
                let (xs, ws) = (tx.shape(), tw.shape());
                if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || tb.len() != ws[0] {
                    return Err(mismatch("conv2d", format!("x {:?}, w {:?}, b {:?}", xs, ws, tb.shape())));
                }
                let d = ConvDims { n: xs[0], c: xs[1], h: xs[2], w: xs[3], o: ws[0], k: ws[2], pad: *pad };
                if d.h + 2 * d.pad < d.k || d.w + 2 * d.pad < d.k {
                    return Err(mismatch("conv2d", format!("kernel {} larger than input {:?}", d.k, xs)));
                }
                let mut out = vec![0.0; d.n * d.o * d.out_h() * d.out_w()];
                kernels::conv2d_forward(tx.data(), tw.data(), tb.data(), d, &mut out);
                Tensor::new(&[d.n, d.o, d.out_h(), d.out_w()], out)?
            }
            Op::MaxPool2(a) => {
                let ta = self.v(*a);
                let s = ta.shape();
                if s.len() != 4 || s[2] < 2 || s[3] < 2 {
                    return Err(mismatch("maxpool2", format!("input {:?}", s)));
                }
                let (oh, ow) = (s[2] / 2, s[3] / 2);
                let mut out = vec![0.0; s[0] * s[1] * oh * ow];
                let arg = kernels::maxpool2_forward(ta.data(), s[0] * s[1], s[2], s[3], &mut out);
                return Ok((Tensor::new(&[s[0], s[1], oh, ow], out)?, arg));
            }
            Op::Reshape(a) => {
                let shape = out_shape.expect("reshape target recorded");
                self.v(*a).clone().reshape(shape)?
            }
            Op::SliceLast { a, start } => {
                let ta = self.v(*a);
                let shape = out_shape.expect("slice shape recorded");
                let len = *shape.last().unwrap();
                let k = last_dim(ta);
                if start + len > k || ta.shape()[..ta.shape().len() - 1] != shape[..shape.len() - 1] {
                    return Err(mismatch("slice_last", format!("{:?}[{start}..{}]", ta.shape(), start + len)));
                }
                let data = ta.data().chunks(k).flat_map(|r| r[*start..start + len].iter().copied()).collect();
                Tensor::new(shape, data)?
            }
            Op::SelectStep { a, t } => {
                let ta = self.v(*a);
                let s = ta.shape();
                if s.len() != 3 || *t >= s[1] {
                    return Err(mismatch("select_step", format!("step {t} of {:?}", s)));
                }
                let (bsz, l, f) = (s[0], s[1], s[2]);
                let mut out = Vec::with_capacity(bsz * f);
                for b in 0..bsz {
                    out.extend_from_slice(&ta.data()[(b * l + t) * f..(b * l + t + 1) * f]);
                }
                Tensor::new(&[bsz, f], out)?
            }
            Op::Stack(parts) => {
                let first = self.v(parts[0]);
                let s = first.shape().to_vec();
                if s.len() != 2 {
                    return Err(mismatch("stack", format!("parts must be 2-D, got {:?}", s)));
                }
                let (bsz, f, l) = (s[0], s[1], parts.len());
                let mut out = vec![0.0; bsz * l * f];
                for (t, p) in parts.iter().enumerate() {
                    let tp = self.v(*p);
                    if tp.shape() != s.as_slice() {
                        return Err(mismatch("stack", format!("{:?} vs {:?}", tp.shape(), s)));
                    }
                    for b in 0..bsz {
                        out[(b * l + t) * f..(b * l + t + 1) * f].copy_from_slice(&tp.data()[b * f..(b + 1) * f]);
                    }
                }
                Tensor::new(&[bsz, l, f], out)?
            }
            Op::RowNorm { a, squared } => {
                let ta = self.v(*a);
                if ta.shape().len() != 2 {
                    return Err(mismatch("row_norm", format!("input {:?} must be 2-D", ta.shape())));
                }
                let k = ta.shape()[1];
                let out: Vec<f64> = ta
                    .data()
                    .chunks(k)
                    .map(|r| {
                        let s: f64 = r.iter().map(|x| x * x).sum();
                        if *squared {
                            s
                        } else {
                            libm::sqrt(s)
                        }
                    })
                    .collect();
                Tensor::new(&[ta.shape()[0]], out)?
            }
            Op::Sum(a) => Tensor::scalar(self.v(*a).data().iter().sum()),
            Op::Mean(a) => {
                let ta = self.v(*a);
                Tensor::scalar(ta.data().iter().sum::<f64>() / ta.len() as f64)
            }
            Op::GridSample { img, theta } => {
                let (ti, tt) = (self.v(*img), self.v(*theta));
                let (is, ts) = (ti.shape(), tt.shape());
                if is.len() != 3 || ts != [is[0], 3, 3] {
                    return Err(mismatch("grid_sample", format!("image {:?}, theta {:?}", is, ts)));
                }
                let mut out = vec![0.0; ti.len()];
                kernels::grid_sample_forward(ti.data(), tt.data(), is[0], is[1], is[2], &mut out);
                Tensor::new(is, out)?
            }
            Op::FrameTransform { t, x } => {
                let (tt, tx) = (self.v(*t), self.v(*x));
                let (ts, xs) = (tt.shape(), tx.shape());
                if ts.len() != 3 || xs.len() != 2 || ts[0] != xs[0] || ts[1] != ts[2] || ts[1] != xs[1] + 1 {
                    return Err(mismatch("frame_transform", format!("T {:?}, frames {:?}", ts, xs)));
                }
                let (m, d) = (ts[0], ts[1]);
                let mut out = vec![0.0; m * d];
                for i in 0..m {
                    let mat = &tt.data()[i * d * d..(i + 1) * d * d];
                    let fr = &tx.data()[i * (d - 1)..(i + 1) * (d - 1)];
                    for r in 0..d {
                        let row = &mat[r * d..(r + 1) * d];
                        let mut s = row[d - 1];
                        for c in 0..d - 1 {
                            s += row[c] * fr[c];
                        }
                        out[i * d + r] = s;
                    }
                }
                Tensor::new(&[m, d], out)?
            }
            Op::Dehomogenize(a) => {
                let ta = self.v(*a);
                if ta.shape().len() != 2 || ta.shape()[1] < 2 {
                    return Err(mismatch("dehomogenize", format!("input {:?}", ta.shape())));
                }
                let d = ta.shape()[1];
                let mut out = Vec::with_capacity(ta.shape()[0] * (d - 1));
                for row in ta.data().chunks(d) {
                    let w = row[d - 1];
                    if libm::fabs(w) < 1e-9 {
                        return Err(Error::DegenerateProjection);
                    }
                    out.extend(row[..d - 1].iter().map(|x| x / w));
                }
                Tensor::new(&[ta.shape()[0], d - 1], out)?
            }
            Op::Euclidean(a) => {
                let ta = self.v(*a);
                if ta.shape().len() != 2 || ta.shape()[1] != 3 {
                    return Err(mismatch("euclidean", format!("parameters {:?} must be [n, 3]", ta.shape())));
                }
                let n = ta.shape()[0];
                let mut out = Vec::with_capacity(n * 9);
                for p in ta.data().chunks(3) {
                    let (s, c) = (libm::sin(p[0]), libm::cos(p[0]));
                    out.extend_from_slice(&[c, -s, p[1], s, c, p[2], 0.0, 0.0, 1.0]);
                }
                Tensor::new(&[n, 3, 3], out)?
            }
        };
        Ok((t, Vec::new()))
    }

    fn compute(&self, op: &Op) -> Result<(Tensor, Vec<usize>)> {
        self.compute_with_shape(op, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }
    /// Adds a vector along the last axis of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias(a, bias))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }
    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(a))
    }

    /// Weighted cross-entropy of `[rows, classes]` logits, averaged over rows.
    /// A row of weight 0 contributes neither loss nor gradient.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> Result<NodeId> {
        self.push(Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec() })
    }

    /// `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`, stride 1.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, padding: Padding) -> Result<NodeId> {
        let k = self.v(w).shape().get(2).copied().unwrap_or(1);
        let pad = match padding {
            Padding::Valid => 0,
            Padding::Same => (k - 1) / 2,
        };
        self.push(Op::Conv2d { x, w, b, pad })
    }

    pub fn maxpool2(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::MaxPool2(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.v(a).clone().reshape(shape)?;
        let needs_grad = self.nodes[a.0].needs_grad;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Reshape(a), value, needs_grad, aux: Vec::new() });
        Ok(id)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let mut shape = self.v(a).shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let op = Op::SliceLast { a, start };
        let (value, _) = self.compute_with_shape(&op, Some(&shape))?;
        let needs_grad = self.nodes[a.0].needs_grad;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad, aux: Vec::new() });
        Ok(id)
    }

    /// Step `t` of a `[batch, steps, features]` tensor.
    pub fn select_step(&mut self, a: NodeId, t: usize) -> Result<NodeId> {
        self.push(Op::SelectStep { a, t })
    }

    /// Stacks `[batch, features]` parts into `[batch, steps, features]`.
    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("stack"));
        }
        self.push(Op::Stack(parts.to_vec()))
    }

    /// Euclidean norm of each row of a 2-D tensor, or its square.
    pub fn row_norm(&mut self, a: NodeId, squared: bool) -> Result<NodeId> {
        self.push(Op::RowNorm { a, squared })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    /// Differentiable bilinear sampling, `img: [n, h, w]`, `theta: [n, 3, 3]`.
    pub fn grid_sample(&mut self, img: NodeId, theta: NodeId) -> Result<NodeId> {
        self.push(Op::GridSample { img, theta })
    }

    /// Applies `t: [m, d+1, d+1]` to frames `x: [m, d]`, returning homogeneous `[m, d+1]`.
    pub fn frame_transform(&mut self, t: NodeId, x: NodeId) -> Result<NodeId> {
        self.push(Op::FrameTransform { t, x })
    }

    /// Divides by the last coordinate and drops it.
    pub fn dehomogenize(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Dehomogenize(a))
    }

    /// `[n, 3]` rows of (angle, tx, ty) to `[n, 3, 3]` rigid transforms.
    pub fn euclidean(&mut self, params: NodeId) -> Result<NodeId> {
        self.push(Op::Euclidean(params))
    }

    /// Re-runs the recorded tape with new input values. Every input must be bound.
    pub fn evaluate(&mut self, bindings: &[(&str, Tensor)]) -> Result<()> {
        let lookup: BTreeMap<&str, &Tensor> = bindings.iter().map(|(k, v)| (*k, v)).collect();
        for (name, id) in &self.inputs {
            if !lookup.contains_key(name.as_str()) {
                return Err(Error::UnboundInput(name.clone()));
            }
            let _ = id;
        }
        for (name, _) in bindings {
            if !self.inputs.contains_key(*name) {
                return Err(Error::UnboundInput(name.to_string()));
            }
        }
        self.evaluated = false;
        for (name, id) in self.inputs.clone() {
            let value = lookup[name.as_str()];
            if value.shape() != self.nodes[id.0].value.shape() {
                return Err(mismatch(
                    "evaluate",
                    format!("input `{name}` declared {:?}, bound {:?}", self.nodes[id.0].value.shape(), value.shape()),
                ));
            }
            self.nodes[id.0].value = value.clone();
        }
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Input | Op::Param | Op::Constant) {
                continue;
            }
            let shape = self.nodes[i].value.shape().to_vec();
            let (value, aux) = self.compute_with_shape(&op, Some(&shape))?;
            if !value.is_finite() {
                return Err(Error::NonFinite { op: op.name() });
            }
            self.nodes[i].value = value;
            self.nodes[i].aux = aux;
        }
        self.evaluated = true;
        Ok(())
    }

    /// Replaces the value of a parameter leaf; call [`Graph::evaluate`] afterwards.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        if self.nodes[id.0].value.shape() != value.shape() {
            return Err(mismatch("set_param", format!("{name}: {:?}", value.shape())));
        }
        self.nodes[id.0].value = value;
        self.evaluated = false;
        Ok(())
    }

    /// Reverse pass from a scalar node. Every registered parameter gets a
    /// gradient, zero when it does not influence `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let lv = self.v(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut params = BTreeMap::new();
        for (name, id) in &self.params {
            let shape = self.v(*id).shape();
            let t = match &grads[id.0] {
                Some(g) => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { op: "backward" });
                    }
                    Tensor::new(shape, g.clone())?
                }
                None => Tensor::zeros(shape),
            };
            params.insert(name.clone(), t);
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        // accumulate `delta` into input `id` if it needs a gradient
        fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
            if !nodes[id.0].needs_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.len()]);
            f(slot);
        }
        let nodes = &self.nodes;
        match &node.op {
            Op::Input | Op::Param | Op::Constant => {}
            Op::Add(a, b) => {
                acc(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(nodes, grads, *b, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(nodes, grads, *b, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.v(*a).data(), self.v(*b).data());
                acc(nodes, grads, *a, |s| {
                    for ((x, y), z) in s.iter_mut().zip(g).zip(vb) {
                        *x += y * z;
                    }
                });
                acc(nodes, grads, *b, |s| {
                    for ((x, y), z) in s.iter_mut().zip(g).zip(va) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale(a, c) => acc(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddBias(a, b) => {
                acc(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let k = self.v(*b).len();
                acc(nodes, grads, *b, |s| {
                    for row in g.chunks(k) {
                        s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.v(*a), self.v(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(nodes, grads, *a, |s| kernels::matmul_bt_acc(g, tb.data(), s, m, n, k));
                acc(nodes, grads, *b, |s| kernels::matmul_at_acc(ta.data(), g, s, m, k, n));
            }
            Op::Sigmoid(a) => acc(nodes, grads, *a, |s| {
                for ((x, y), o) in s.iter_mut().zip(g).zip(out) {
                    *x += y * o * (1.0 - o);
                }
            }),
            Op::Tanh(a) => acc(nodes, grads, *a, |s| {
                for ((x, y), o) in s.iter_mut().zip(g).zip(out) {
                    *x += y * (1.0 - o * o);
                }
            }),
            Op::Relu(a) => {
                let va = self.v(*a).data();
                acc(nodes, grads, *a, |s| {
                    for ((x, y), v) in s.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let k = last_dim(&node.value);
                acc(nodes, grads, *a, |s| {
                    for ((srow, grow), orow) in s.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                        let dot: f64 = grow.iter().zip(orow).map(|(x, y)| x * y).sum();
                        for ((x, gy), o) in srow.iter_mut().zip(grow).zip(orow) {
                            *x += o * (gy - dot);
                        }
                    }
                })
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let tl = self.v(*logits);
                let (n, k) = (tl.shape()[0], tl.shape()[1]);
                let probs = softmax_rows(tl.data(), k);
                let scale = g[0] / n as f64;
                acc(nodes, grads, *logits, |s| {
                    for r in 0..n {
                        let w = weights[r];
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                            s[r * k + c] += scale * w * (probs[r * k + c] - onehot);
                        }
                    }
                })
            }
            Op::Conv2d { x, w, b, pad } => {
                let (tx, tw) = (self.v(*x), self.v(*w));
                let (xs, ws) = (tx.shape(), tw.shape());
                let d = ConvDims { n: xs[0], c: xs[1], h: xs[2], w: xs[3], o: ws[0], k: ws[2], pad: *pad };
                let mut dx = nodes[x.0].needs_grad.then(|| vec![0.0; tx.len()]);
                let mut dw = nodes[w.0].needs_grad.then(|| vec![0.0; tw.len()]);
                let mut db = nodes[b.0].needs_grad.then(|| vec![0.0; ws[0]]);
                kernels::conv2d_backward(
                    tx.data(),
                    tw.data(),
                    g,
                    d,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (id, delta) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(delta) = delta {
                        acc(nodes, grads, id, |s| s.iter_mut().zip(&delta).for_each(|(x, y)| *x += y));
                    }
                }
            }
            Op::MaxPool2(a) => acc(nodes, grads, *a, |s| {
                for (o, &src) in node.aux.iter().enumerate() {
                    s[src] += g[o];
                }
            }),
            Op::Reshape(a) => acc(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::SliceLast { a, start } => {
                let k = last_dim(self.v(*a));
                let len = last_dim(&node.value);
                acc(nodes, grads, *a, |s| {
                    for (srow, grow) in s.chunks_mut(k).zip(g.chunks(len)) {
                        srow[*start..start + len].iter_mut().zip(grow).for_each(|(x, y)| *x += y);
                    }
                })
            }
            Op::SelectStep { a, t } => {
                let sh = self.v(*a).shape();
                let (bsz, l, f) = (sh[0], sh[1], sh[2]);
                acc(nodes, grads, *a, |s| {
                    for b in 0..bsz {
                        let dst = &mut s[(b * l + t) * f..(b * l + t + 1) * f];
                        dst.iter_mut().zip(&g[b * f..(b + 1) * f]).for_each(|(x, y)| *x += y);
                    }
                })
            }
            Op::Stack(parts) => {
                let sh = node.value.shape();
                let (bsz, l, f) = (sh[0], sh[1], sh[2]);
                for (t, p) in parts.iter().enumerate() {
                    acc(nodes, grads, *p, |s| {
                        for b in 0..bsz {
                            let src = &g[(b * l + t) * f..(b * l + t + 1) * f];
                            s[b * f..(b + 1) * f].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::RowNorm { a, squared } => {
                let ta = self.v(*a);
                let k = ta.shape()[1];
                acc(nodes, grads, *a, |s| {
                    for (r, (srow, xrow)) in s.chunks_mut(k).zip(ta.data().chunks(k)).enumerate() {
                        if *squared {
                            srow.iter_mut().zip(xrow).for_each(|(x, v)| *x += 2.0 * g[r] * v);
                        } else if out[r] > 0.0 {
                            let c = g[r] / out[r];
                            srow.iter_mut().zip(xrow).for_each(|(x, v)| *x += c * v);
                        }
                    }
                })
            }
            Op::Sum(a) => acc(nodes, grads, *a, |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.v(*a).len() as f64;
                acc(nodes, grads, *a, |s| s.iter_mut().for_each(|x| *x += g[0] / n))
            }
            Op::GridSample { img, theta } => {
                let (ti, tt) = (self.v(*img), self.v(*theta));
                let is = ti.shape();
                let mut dimg = nodes[img.0].needs_grad.then(|| vec![0.0; ti.len()]);
                let mut dth = nodes[theta.0].needs_grad.then(|| vec![0.0; tt.len()]);
                kernels::grid_sample_backward(
                    ti.data(),
                    tt.data(),
                    g,
                    is[0],
                    is[1],
                    is[2],
                    dimg.as_deref_mut(),
                    dth.as_deref_mut(),
                );
                for (id, delta) in [(*img, dimg), (*theta, dth)] {
                    if let Some(delta) = delta {
                        acc(nodes, grads, id, |s| s.iter_mut().zip(&delta).for_each(|(x, y)| *x += y));
                    }
                }
            }
            Op::FrameTransform { t, x } => {
                let (tt, tx) = (self.v(*t), self.v(*x));
                let (m, d) = (tt.shape()[0], tt.shape()[1]);
                acc(nodes, grads, *t, |s| {
                    for i in 0..m {
                        let fr = &tx.data()[i * (d - 1)..(i + 1) * (d - 1)];
                        for r in 0..d {
                            let gy = g[i * d + r];
                            let row = &mut s[i * d * d + r * d..i * d * d + (r + 1) * d];
                            for c in 0..d - 1 {
                                row[c] += gy * fr[c];
                            }
                            row[d - 1] += gy;
                        }
                    }
                });
                acc(nodes, grads, *x, |s| {
                    for i in 0..m {
                        let mat = &tt.data()[i * d * d..(i + 1) * d * d];
                        for r in 0..d {
                            let gy = g[i * d + r];
                            for c in 0..d - 1 {
                                s[i * (d - 1) + c] += gy * mat[r * d + c];
                            }
                        }
                    }
                });
            }
            Op::Dehomogenize(a) => {
                let ta = self.v(*a);
                let d = ta.shape()[1];
                acc(nodes, grads, *a, |s| {
                    for (r, (srow, xrow)) in s.chunks_mut(d).zip(ta.data().chunks(d)).enumerate() {
                        let w = xrow[d - 1];
                        let grow = &g[r * (d - 1)..(r + 1) * (d - 1)];
                        let mut gw = 0.0;
                        for c in 0..d - 1 {
                            srow[c] += grow[c] / w;
                            gw -= grow[c] * xrow[c] / (w * w);
                        }
                        srow[d - 1] += gw;
                    }
                })
            }
            Op::Euclidean(a) => {
                let ta = self.v(*a);
                acc(nodes, grads, *a, |s| {
                    for (r, p) in ta.data().chunks(3).enumerate() {
                        let (sn, cs) = (libm::sin(p[0]), libm::cos(p[0]));
                        let gm = &g[r * 9..r * 9 + 9];
                        s[r * 3] += -gm[0] * sn - gm[1] * cs + gm[3] * cs - gm[4] * sn;
                        s[r * 3 + 1] += gm[2];
                        s[r * 3 + 2] += gm[5];
                    }
                })
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_graph_passes_input_through() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::vector(&[1.0, 2.0, 3.0]));
        let y = g.scale(x, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matmul_with_identity() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, &[5.0, 7.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[5.0, 7.0]);
        assert_eq!(g.shape(c), &[2, 1]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::vector(&[2.0]));
        let _unused = g.scale(w, 3.0).unwrap();
        let c = g.constant(Tensor::scalar(4.0));
        let loss = g.sum(c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn linear_loss_gradient() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::scalar(2.0));
        let x = g.input("x", Tensor::scalar(3.0));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("w").unwrap().item(), 3.0);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::vector(&[1.0, 2.0]));
        let y = g.scale(w, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn placeholder_requires_evaluation() {
        let mut g = Graph::new();
        let x = g.placeholder("x", &[1]);
        let w = g.param("w", Tensor::scalar(1.5));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p).unwrap();
        assert_eq!(g.backward(loss).unwrap_err(), Error::NotEvaluated);
        assert!(matches!(g.evaluate(&[]), Err(Error::UnboundInput(_))));
        g.evaluate(&[("x", Tensor::scalar(4.0))]).unwrap();
        assert_eq!(g.value(loss).item(), 6.0);
        assert_eq!(g.backward(loss).unwrap().param("w").unwrap().item(), 4.0);
    }

    #[test]
    fn evaluate_rejects_wrong_shape() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::vector(&[1.0, 2.0]));
        g.sum(x).unwrap();
        let err = g.evaluate(&[("x", Tensor::vector(&[1.0]))]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[f64::MAX]));
        let err = g.scale(x, 10.0).unwrap_err();
        assert_eq!(err, Error::NonFinite { op: "scale" });
    }

    #[test]
    fn zero_weight_rows_contribute_nothing() {
        let mut g = Graph::new();
        let logits = g.param("l", Tensor::matrix(2, 3, &[0.3, -1.0, 2.0, 1.0, 0.5, -0.2]).unwrap());
        let loss = g.cross_entropy(logits, &[2, 0], &[1.0, 0.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        let gl = grads.param("l").unwrap().data();
        assert_eq!(&gl[3..], &[0.0, 0.0, 0.0]);

        let mut g2 = Graph::new();
        let l2 = g2.param("l", Tensor::matrix(1, 3, &[0.3, -1.0, 2.0]).unwrap());
        let single = g2.cross_entropy(l2, &[2], &[1.0]).unwrap();
        // the zero-weight row leaves the summed loss untouched; only the row count differs
        assert_eq!(g.value(loss).item() * 2.0, g2.value(single).item());
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::matrix(1, 2, &[0.0, 0.0]).unwrap());
        assert!(g.cross_entropy(logits, &[2], &[1.0]).is_err());
        assert!(g.cross_entropy(logits, &[0, 1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn unused_params_get_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::vector(&[1.0, 2.0]));
        g.param("b", Tensor::vector(&[5.0]));
        let loss = g.sum(a).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("a").unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.param("b").unwrap().data(), &[0.0]);
    }

    #[test]
    fn dehomogenize_rejects_points_at_infinity() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 3, &[1.0, 2.0, 0.0]).unwrap());
        assert_eq!(g.dehomogenize(p).unwrap_err(), Error::DegenerateProjection);
    }
}
