//! Central-difference checks of every differentiable primitive and of the
//! composite losses used for training. Each check panics on a mismatch.

use rand::Rng as _;
use transmat::models::{build_converter, build_model, Activation, ConverterSpec, ModelSpec};
use transmat::nn::Bound;
use transmat::transforms::Family;
use transmat::rng::{stream, Rng};
use transmat::{Graph, NodeId, Padding, Result, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SAMPLER_TOL: f64 = 1e-3;
/// Denominator floor so that near-zero gradients are compared absolutely.
const FLOOR: f64 = 1e-2;
const INSTANCES: u64 = 20;

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Scalar loss `Σ probe ⊙ f(inputs)` with every input bound as a parameter.
fn loss_of<F>(inputs: &[Tensor], probe: &Tensor, f: &F) -> (Graph, NodeId)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().enumerate().map(|(i, t)| g.param(&format!("p{i}"), t.clone())).collect();
    let out = f(&mut g, &ids).unwrap();
    let p = g.constant(probe.clone().reshape(g.shape(out)).unwrap());
    let weighted = g.mul(out, p).unwrap();
    let loss = g.sum(weighted).unwrap();
    (g, loss)
}

fn check<F>(name: &str, inputs: Vec<Tensor>, probe_seed: u64, tol: f64, f: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let shape = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &ids).unwrap();
        g.shape(out).to_vec()
    };
    let probe = random(&mut stream(probe_seed, "probe"), &shape, -1.0, 1.0);
    let (g, loss) = loss_of(&inputs, &probe, &f);
    let grads = g.backward(loss).unwrap();
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.param(&format!("p{i}")).unwrap();
        for k in 0..t.len() {
            let at = |delta: f64| {
                let mut moved = inputs.clone();
                moved[i].data_mut()[k] += delta;
                let (g, l) = loss_of(&moved, &probe, &f);
                g.value(l).item()
            };
            let numeric = (at(EPS) - at(-EPS)) / (2.0 * EPS);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            assert!(err < tol, "{name}: input {i}[{k}] analytic {a} numeric {numeric} rel {err}");
        }
    }
}

fn bound_from(names: &[String], ids: &[NodeId]) -> Bound {
    Bound::from_ids(names.iter().cloned().zip(ids.iter().copied()))
}

fn each_instance(name: &str, mut body: impl FnMut(&mut Rng, u64)) {
    for seed in 0..INSTANCES {
        let mut rng = stream(seed, name);
        body(&mut rng, seed);
    }
}

pub fn elementwise_ops() {
    each_instance("elementwise", |r, s| {
        let shape = [r.random_range(1..4), r.random_range(1..5)];
        let a = random(r, &shape, -2.0, 2.0);
        let b = random(r, &shape, -2.0, 2.0);
        check("add", vec![a.clone(), b.clone()], s, TOL, |g, x| g.add(x[0], x[1]));
        check("sub", vec![a.clone(), b.clone()], s, TOL, |g, x| g.sub(x[0], x[1]));
        check("mul", vec![a.clone(), b.clone()], s, TOL, |g, x| g.mul(x[0], x[1]));
        check("scale", vec![a.clone()], s, TOL, |g, x| g.scale(x[0], -1.7));
        check("sigmoid", vec![a.clone()], s, TOL, |g, x| g.sigmoid(x[0]));
        check("tanh", vec![a.clone()], s, TOL, |g, x| g.tanh(x[0]));
        // keep away from the kink
        let shifted = Tensor::new(&shape, a.data().iter().map(|v| v + v.signum() * 0.1).collect()).unwrap();
        check("relu", vec![shifted], s, TOL, |g, x| g.relu(x[0]));
    });
}

pub fn linear_algebra_ops() {
    each_instance("linear", |r, s| {
        let (m, k, n) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
        let a = random(r, &[m, k], -1.0, 1.0);
        let b = random(r, &[k, n], -1.0, 1.0);
        let bias = random(r, &[n], -1.0, 1.0);
        check("matmul", vec![a.clone(), b.clone()], s, TOL, |g, x| g.matmul(x[0], x[1]));
        check("add_bias", vec![a.clone(), random(r, &[k], -1.0, 1.0)], s, TOL, |g, x| g.add_bias(x[0], x[1]));
        check("linear", vec![a, b, bias], s, TOL, |g, x| transmat::nn::linear(g, x[0], x[1], x[2]));
    });
}

pub fn reductions_and_norms() {
    each_instance("reductions", |r, s| {
        let shape = [r.random_range(1..4), r.random_range(2..5)];
        let a = random(r, &shape, -1.0, 1.0);
        check("sum", vec![a.clone()], s, TOL, |g, x| g.sum(x[0]));
        check("mean", vec![a.clone()], s, TOL, |g, x| g.mean(x[0]));
        check("row_norm", vec![a.clone()], s, TOL, |g, x| g.row_norm(x[0], false));
        check("row_norm squared", vec![a.clone()], s, TOL, |g, x| g.row_norm(x[0], true));
        check("softmax", vec![a.clone()], s, TOL, |g, x| g.softmax(x[0]));
        let targets: Vec<usize> = (0..shape[0]).map(|_| r.random_range(0..shape[1])).collect();
        let weights: Vec<f64> = (0..shape[0]).map(|_| r.random_range(0.0..2.0)).collect();
        check("cross_entropy", vec![a], s, TOL, |g, x| g.cross_entropy(x[0], &targets, &weights));
    });
}

pub fn shape_ops() {
    each_instance("shape", |r, s| {
        let (b, l, f) = (r.random_range(1..3), r.random_range(2..4), r.random_range(2..4));
        let a = random(r, &[b, l, f], -1.0, 1.0);
        let t = r.random_range(0..l);
        check("select_step", vec![a.clone()], s, TOL, |g, x| g.select_step(x[0], t));
        check("reshape", vec![a.clone()], s, TOL, |g, x| g.reshape(x[0], &[b * l, f]));
        check("slice_last", vec![a.clone()], s, TOL, |g, x| g.slice_last(x[0], 1, f - 1));
        let parts = vec![random(r, &[b, f], -1.0, 1.0), random(r, &[b, f], -1.0, 1.0)];
        check("stack", parts, s, TOL, |g, x| g.stack(&[x[0], x[1], x[0]]));
    });
}

pub fn convolution_and_pooling() {
    each_instance("conv", |r, s| {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
        let side = r.random_range(4..7);
        let x = random(r, &[n, c, side, side], -1.0, 1.0);
        let w = random(r, &[o, c, 3, 3], -1.0, 1.0);
        let bias = random(r, &[o], -1.0, 1.0);
        for pad in [Padding::Same, Padding::Valid] {
            check("conv2d", vec![x.clone(), w.clone(), bias.clone()], s, TOL, |g, v| g.conv2d(v[0], v[1], v[2], pad));
        }
        // distinct values so that the pooled maximum is unique
        let mut distinct: Vec<f64> = (0..n * c * side * side).map(|i| i as f64 * 0.05).collect();
        for i in (1..distinct.len()).rev() {
            distinct.swap(i, r.random_range(0..=i));
        }
        let p = Tensor::new(&[n, c, side, side], distinct).unwrap();
        check("maxpool2", vec![p], s, TOL, |g, v| g.maxpool2(v[0]));
    });
}

pub fn geometric_ops() {
    each_instance("geometry", |r, s| {
        let m = r.random_range(1..4);
        let params = random(r, &[m, 3], -1.0, 1.0);
        check("euclidean", vec![params.clone()], s, TOL, |g, v| g.euclidean(v[0]));
        let d = r.random_range(1..3);
        let t = random(r, &[m, d + 1, d + 1], -1.0, 1.0);
        let frames = random(r, &[m, d], -1.0, 1.0);
        check("frame_transform", vec![t, frames], s, TOL, |g, v| g.frame_transform(v[0], v[1]));
        // homogeneous coordinate kept away from zero
        let mut h = random(r, &[m, d + 1], -1.0, 1.0);
        for row in h.data_mut().chunks_mut(d + 1) {
            row[d] = r.random_range(0.5..2.0);
        }
        check("dehomogenize", vec![h], s, TOL, |g, v| g.dehomogenize(v[0]));
    });
}

pub fn bilinear_sampler() {
    each_instance("sampler", |r, s| {
        let (n, side) = (r.random_range(1..3), r.random_range(4..8));
        let img = random(r, &[n, side, side], 0.0, 1.0);
        let mut theta = Vec::new();
        for _ in 0..n {
            let a = r.random_range(-3.0..3.0f64);
            let (tx, ty) = (r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
            let k = r.random_range(0.8..1.2);
            theta.extend_from_slice(&[k * a.cos(), -a.sin(), tx, a.sin(), k * a.cos(), ty, 0.0, 0.0, 1.0]);
        }
        let theta = Tensor::new(&[n, 3, 3], theta).unwrap();
        check("grid_sample", vec![img, theta], s, SAMPLER_TOL, |g, v| g.grid_sample(v[0], v[1]));
    });
}

pub fn lstm_cell() {
    each_instance("lstm", |r, s| {
        let (b, f, h) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..4));
        let inputs = vec![
            random(r, &[b, f], -1.0, 1.0),
            random(r, &[b, h], -1.0, 1.0),
            random(r, &[b, h], -1.0, 1.0),
            random(r, &[f, 4 * h], -1.0, 1.0),
            random(r, &[h, 4 * h], -1.0, 1.0),
            random(r, &[4 * h], -1.0, 1.0),
        ];
        check("lstm_cell", inputs, s, TOL, |g, v| {
            let w = transmat::nn::LstmWeights { w_x: v[3], w_h: v[4], bias: v[5] };
            let (hn, cn) = transmat::nn::lstm_cell(g, v[0], v[1], v[2], &w)?;
            g.add(hn, cn)
        });
    });
}

/// Whole-network check through the tagger and the converter, covering the
/// unrolled recurrence and the weighted cross entropy over padded frames.
pub fn sequence_networks() {
    each_instance("networks", |r, s| {
        let steps = r.random_range(3..7);
        let x = random(r, &[2, steps, 1], 0.0, 1.0);
        let model = build_model(&ModelSpec::LstmTagger { features: 1, hidden: 3, classes: 2 }, s).unwrap();
        let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        let values: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
        let targets: Vec<usize> = (0..2 * steps).map(|_| r.random_range(0..2)).collect();
        let weights: Vec<f64> = (0..2 * steps).map(|i| if i == 2 * steps - 1 { 0.0 } else { r.random_range(0.1..3.0) }).collect();
        let spec = model.spec.clone();
        check("tagger", values, s, TOL, |g, v| {
            let bound = bound_from(&names, v);
            let xi = g.constant(x.clone());
            let logits = spec.forward(g, &bound, xi)?;
            g.cross_entropy(logits, &targets, &weights)
        });
        let conv = build_converter(&ConverterSpec::Lstm { features: 1, hidden: 3, family: Family::Unrestricted, activation: Activation::Linear }, s).unwrap();
        let names: Vec<String> = conv.params.iter().map(|p| p.name.clone()).collect();
        let values: Vec<Tensor> = conv.params.iter().map(|p| p.value.clone()).collect();
        let spec = conv.spec.clone();
        check("converter", values, s, TOL, |g, v| {
            let bound = bound_from(&names, v);
            let xi = g.constant(x.clone());
            Ok(spec.forward(g, &bound, xi)?.converted)
        });
    });
}

pub fn training_losses() {
    use transmat::correspondence::{correspondence_loss, correspondence_loss_node, frobenius_loss};
    each_instance("losses", |r, s| {
        let mats = random(r, &[4, 3, 3], -1.0, 1.0);
        let targets = random(r, &[4, 3, 3], -1.0, 1.0);
        let mask = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        for squared in [false, true] {
            let (t, m) = (targets.clone(), mask.clone());
            check("frobenius", vec![mats.clone()], s, TOL, move |g, x| frobenius_loss(g, x[0], &t, &m, squared));
        }

        let rows = random(r, &[5, 2], -1.0, 1.0);
        let partners = vec![random(r, &[5, 2], -1.0, 1.0), random(r, &[5, 2], -1.0, 1.0)];
        let masks = vec![Tensor::new(&[5], vec![1.0; 5]).unwrap(), Tensor::new(&[5], vec![1.0, 1.0, 0.0, 1.0, 1.0]).unwrap()];
        for squared in [false, true] {
            let (p, m) = (partners.clone(), masks.clone());
            check("correspondence", vec![rows.clone()], s, TOL, move |g, x| {
                correspondence_loss_node(g, x[0], &p, &m, 5, squared)
            });
        }

        // one sample whose rows are its values: the graph loss equals the scalar one
        let flat = |t: &Tensor| t.clone().reshape(&[1, 10]).unwrap();
        let ones = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(flat(&rows));
        let l = correspondence_loss_node(&mut g, x, &[flat(&partners[0]), flat(&partners[1])], &[ones.clone(), ones], 1, false)
            .unwrap();
        let direct = correspondence_loss(rows.data(), &[partners[0].data(), partners[1].data()], false).unwrap();
        assert!((g.value(l).item() - direct).abs() < 1e-12);
    });
}

/// Every check with its name.
pub const ALL: [(&str, fn()); 10] = [
    ("elementwise", elementwise_ops),
    ("linear algebra", linear_algebra_ops),
    ("reductions and norms", reductions_and_norms),
    ("shape ops", shape_ops),
    ("convolution and pooling", convolution_and_pooling),
    ("geometric ops", geometric_ops),
    ("bilinear sampler", bilinear_sampler),
    ("lstm cell", lstm_cell),
    ("sequence networks", sequence_networks),
    ("frobenius and correspondence losses", training_losses),
];
