//! Parameter storage and the layer building blocks shared by every network.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Ordered, named parameter set. Declaration order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        match self.params.iter_mut().find(|p| p.name == name) {
            Some(p) => p.value = value,
            None => self.params.push(Param { name: name.to_string(), value, frozen: false }),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    /// Freezes every parameter except those listed.
    pub fn train_only(&mut self, names: &[String]) {
        for p in &mut self.params {
            p.frozen = !names.contains(&p.name);
        }
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| !p.frozen)
    }

    /// Registers every parameter on the graph under `prefix.name`.
    pub fn bind(&self, g: &mut Graph, prefix: &str) -> Bound {
        let mut ids = BTreeMap::new();
        for p in &self.params {
            let id = if p.frozen {
                g.constant(p.value.clone())
            } else {
                g.param(&format!("{prefix}.{}", p.name), p.value.clone())
            };
            ids.insert(p.name.clone(), id);
        }
        Bound { prefix: prefix.to_string(), ids }
    }

    /// Registers every parameter as a constant, for inference.
    pub fn bind_constants(&self, g: &mut Graph) -> Bound {
        let ids = self.params.iter().map(|p| (p.name.clone(), g.constant(p.value.clone()))).collect();
        Bound { prefix: String::new(), ids }
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    prefix: String,
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Handles from explicit `(name, node)` pairs, with no gradient prefix.
    pub fn from_ids(ids: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        Bound { prefix: String::new(), ids: ids.into_iter().collect() }
    }

    pub fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter `{name}` was not bound"))
    }

    /// Gradients of this store's trainable parameters, keyed by unprefixed name.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for name in self.ids.keys() {
            if let Some(t) = grads.param(&format!("{}.{name}", self.prefix)) {
                out.insert(name.clone(), t.clone());
            }
        }
        out
    }
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// `x · W + b` for `x: [rows, in]`, `W: [in, out]`.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Graph handles of one LSTM layer's weights. Gate order along the
/// `4·hidden` axis is input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub bias: NodeId,
}

pub fn lstm_params(store: &mut ParamStore, prefix: &str, features: usize, hidden: usize, rng: &mut Rng) {
    store.insert(&format!("{prefix}.w_x"), glorot(&[features, 4 * hidden], features, 4 * hidden, rng));
    store.insert(&format!("{prefix}.w_h"), glorot(&[hidden, 4 * hidden], hidden, 4 * hidden, rng));
    // forget gates start open
    let bias = (0..4 * hidden).map(|i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 }).collect();
    store.insert(&format!("{prefix}.bias"), Tensor::new(&[4 * hidden], bias).expect("shape matches"));
}

impl LstmWeights {
    pub fn from_bound(bound: &Bound, prefix: &str) -> Self {
        LstmWeights {
            w_x: bound.id(&format!("{prefix}.w_x")),
            w_h: bound.id(&format!("{prefix}.w_h")),
            bias: bound.id(&format!("{prefix}.bias")),
        }
    }
}

/// One LSTM step on a batch: `x_t: [b, f]`, `h_prev, c_prev: [b, hidden]`.
pub fn lstm_cell(
    g: &mut Graph,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    w: &LstmWeights,
) -> Result<(NodeId, NodeId)> {
    let hidden = g.shape(h_prev).last().copied().unwrap_or(0);
    let gate_width = g.shape(w.bias)[0];
    if gate_width != 4 * hidden || g.shape(c_prev) != g.shape(h_prev) || g.shape(w.w_h) != [hidden, gate_width] {
        return Err(Error::DimensionMismatch { expected: 4 * hidden, found: gate_width });
    }
    if g.shape(x_t).len() != 2 || g.shape(w.w_x)[0] != g.shape(x_t)[1] {
        return Err(Error::DimensionMismatch { expected: g.shape(w.w_x)[0], found: g.shape(x_t)[1] });
    }
    let xw = g.matmul(x_t, w.w_x)?;
    let hw = g.matmul(h_prev, w.w_h)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add_bias(pre, w.bias)?;
    let i = g.slice_last(pre, 0, hidden)?;
    let f = g.slice_last(pre, hidden, hidden)?;
    let c_hat = g.slice_last(pre, 2 * hidden, hidden)?;
    let o = g.slice_last(pre, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let c_hat = g.tanh(c_hat)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, c_hat)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs an LSTM over `x: [b, steps, f]` from zero state; returns `h_t` per step.
pub fn lstm_unroll(g: &mut Graph, x: NodeId, w: &LstmWeights) -> Result<Vec<NodeId>> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch { op: "lstm", detail: format!("input {:?} must be [b, steps, f]", shape) });
    }
    let hidden = g.shape(w.w_h)[0];
    let mut h = g.constant(Tensor::zeros(&[shape[0], hidden]));
    let mut c = g.constant(Tensor::zeros(&[shape[0], hidden]));
    let mut out = Vec::with_capacity(shape[1]);
    for t in 0..shape[1] {
        let x_t = g.select_step(x, t)?;
        let (h2, c2) = lstm_cell(g, x_t, h, c, w)?;
        h = h2;
        c = c2;
        out.push(h);
    }
    Ok(out)
}

/// Per-row argmax of a `[rows, classes]` tensor.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = *t.shape().last().unwrap();
    t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Zero tensor per trainable parameter, used when a stage has nothing to learn.
pub fn zero_grads(store: &ParamStore) -> BTreeMap<String, Tensor> {
    store.trainable().map(|p| (p.name.clone(), Tensor::zeros(p.value.shape()))).collect()
}
