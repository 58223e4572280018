#![no_std]
//! Domain transfer through learned, explicit per-sample transformation matrices.
//!
//! A *converter* network maps every target-domain sample to a homogeneous
//! transform that carries it into the source domain, where an existing
//! model keeps working. This crate holds the numerical core: a small
//! reverse-mode autodiff engine, transform families and differentiable
//! samplers, the model and converter builders, correspondence construction,
//! the staged training pipeline with its baselines, data synthesis and the
//! evaluation metrics. All IO lives in the companion CLI crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod correspondence;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod transforms;

pub use autodiff::{Gradients, Graph, NodeId, Padding};
pub use error::{Error, Result};
pub use tensor::Tensor;
