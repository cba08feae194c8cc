//! Adam optimizer over [`NetworkParams`].

use super::network::{Gradients, NetworkParams};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let n = params.num_params();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    let g = grads.flat();
    assert_eq!(g.len(), state.m.len(), "gradient shape does not match optimizer state");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut w = params.flat();
    for k in 0..w.len() {
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g[k];
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g[k] * g[k];
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        w[k] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    params.set_flat(&w);
}

/// Rescales `grads` so its norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
}
