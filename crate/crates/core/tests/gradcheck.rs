//! Central finite differences against the reverse-mode gradients.

mod common;

use common::gradcheck_cases as cases;

fn check(f: fn() -> f64, tol: f64) {
    let e = f();
    assert!(e < tol, "worst relative error {e} >= {tol}");
}

#[test]
fn linear_ops() {
    check(cases::linear_ops, 1e-6);
}

#[test]
fn elementwise_ops() {
    check(cases::elementwise_ops, 1e-4);
}

#[test]
fn structural_ops() {
    check(cases::structural_ops, 1e-4);
}

#[test]
fn softmax_cross_entropy() {
    check(cases::softmax_cross_entropy, 1e-4);
}

#[test]
fn logsumexp_transition_step() {
    check(cases::logsumexp_transition_step, 1e-4);
}

#[test]
fn lstm_cell_gradients() {
    check(cases::lstm_cell_gradients, 1e-4);
}

#[test]
fn bilstm_gradients_with_padding() {
    check(cases::bilstm_gradients_with_padding, 1e-4);
}

#[test]
fn crf_nll_gradients() {
    check(cases::crf_nll_gradients, 1e-5);
}

#[test]
fn crf_batch_nll_gradients() {
    check(cases::crf_batch_nll_gradients, 1e-5);
}
