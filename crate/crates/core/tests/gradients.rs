#[allow(dead_code)]
mod support;

use support::gradcheck;

#[test]
fn elementwise_ops() {
    gradcheck::elementwise_ops();
}

#[test]
fn linear_algebra_ops() {
    gradcheck::linear_algebra_ops();
}

#[test]
fn reductions_and_norms() {
    gradcheck::reductions_and_norms();
}

#[test]
fn shape_ops() {
    gradcheck::shape_ops();
}

#[test]
fn convolution_and_pooling() {
    gradcheck::convolution_and_pooling();
}

#[test]
fn geometric_ops() {
    gradcheck::geometric_ops();
}

#[test]
fn bilinear_sampler() {
    gradcheck::bilinear_sampler();
}

#[test]
fn lstm_cell() {
    gradcheck::lstm_cell();
}

#[test]
fn sequence_networks() {
    gradcheck::sequence_networks();
}

#[test]
fn training_losses() {
    gradcheck::training_losses();
}
