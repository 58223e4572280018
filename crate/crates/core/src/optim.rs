//! First-order optimizers over a [`ParamStore`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub kind: OptimizerKind,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn adam(learning_rate: f64) -> Self {
        Self::new(learning_rate, OptimizerKind::default())
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(learning_rate, OptimizerKind::Sgd)
    }

    pub fn new(learning_rate: f64, kind: OptimizerKind) -> Self {
        OptimizerState { learning_rate, kind, first: BTreeMap::new(), second: BTreeMap::new(), step: 0 }
    }

    /// First-moment accumulator of a parameter, once it has been stepped.
    pub fn moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(|v| v.as_slice())
    }
}

/// Applies one update to every non-frozen parameter. Frozen parameters are
/// left untouched and need no gradient.
pub fn optimizer_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
) -> Result<()> {
    for p in params.trainable() {
        let g = grads.get(&p.name).ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        if g.len() != p.value.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                detail: alloc::format!("{}: {:?} vs {:?}", p.name, g.shape(), p.value.shape()),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "optimizer_step" });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = state.learning_rate;
    for p in params.iter_mut().filter(|p| !p.frozen) {
        let g = grads[&p.name].data();
        match state.kind {
            OptimizerKind::Sgd => {
                p.value.data_mut().iter_mut().zip(g).for_each(|(w, gi)| *w -= lr * gi);
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let n = g.len();
                let m = state.first.entry(p.name.to_string()).or_insert_with(|| vec![0.0; n]);
                let v = state.second.entry(p.name.to_string()).or_insert_with(|| vec![0.0; n]);
                let bc1 = 1.0 - libm::pow(beta1, t as f64);
                let bc2 = 1.0 - libm::pow(beta2, t as f64);
                for (((w, gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *w -= lr * mhat / (libm::sqrt(vhat) + eps);
                }
            }
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.values().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::scalar(g));
        m
    }

    #[test]
    fn sgd_one_step() {
        let mut p = single(1.0);
        let mut st = OptimizerState::sgd(0.1);
        optimizer_step(&mut p, &grad(0.5), &mut st).unwrap();
        assert!((p.get("w").unwrap().item() - 0.95).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.3);
        let mut st = OptimizerState::adam(1e-3);
        for _ in 0..5 {
            optimizer_step(&mut p, &grad(0.0), &mut st).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 0.3);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = single(1.0);
        let mut st = OptimizerState::adam(0.1);
        let mut last = 1.0;
        for _ in 0..3 {
            let w = p.get("w").unwrap().item();
            optimizer_step(&mut p, &grad(2.0 * w), &mut st).unwrap();
            let w2 = p.get("w").unwrap().item();
            assert!(w2 * w2 < last);
            last = w2 * w2;
        }
    }

    #[test]
    fn missing_and_non_finite_gradients() {
        let mut p = single(1.0);
        let mut st = OptimizerState::adam(1e-3);
        assert_eq!(
            optimizer_step(&mut p, &BTreeMap::new(), &mut st).unwrap_err(),
            Error::MissingGradient("w".into())
        );
        assert!(optimizer_step(&mut p, &grad(f64::NAN), &mut st).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn frozen_params_need_no_gradient() {
        let mut p = single(1.0);
        p.freeze_all(true);
        let mut st = OptimizerState::adam(1e-3);
        optimizer_step(&mut p, &BTreeMap::new(), &mut st).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Tensor::vector(&[3.0, 4.0]));
        let before = clip_global_norm(&mut m, 1.0);
        assert_eq!(before, 5.0);
        let after: f64 = m["a"].data().iter().map(|v| v * v).sum();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
