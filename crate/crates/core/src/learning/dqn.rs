//! Deep Q-learning: temporal-difference loss against a target network.

use super::network::{Gradients, NetworkError, NetworkParams};

/// One stored transition, with features already extracted.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub features: Vec<Vec<f64>>,
    pub focus: Option<usize>,
    pub action: usize,
    pub reward: f64,
    pub next_features: Vec<Vec<f64>>,
    pub next_focus: Option<usize>,
    pub next_mask: Vec<bool>,
    pub terminal: bool,
}

#[derive(Clone, Debug)]
pub struct DqnLoss {
    pub loss: f64,
    pub grads: Gradients,
}

/// TD target `r + gamma * max_a' Q_target(s', a')` over unmasked actions;
/// just `r` when terminal or nothing is applicable.
pub fn td_target(target: &NetworkParams, e: &Experience, gamma: f64) -> Result<f64, NetworkError> {
    if e.terminal || !e.next_mask.iter().any(|&m| m) {
        return Ok(e.reward);
    }
    let q = target.forward(&e.next_features, &e.next_mask, e.next_focus)?;
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(e.reward + gamma * best)
}

/// Mean squared TD error over `batch` and its gradient for `online`.
pub fn dqn_loss(
    online: &NetworkParams,
    target: &NetworkParams,
    batch: &[Experience],
    gamma: f64,
) -> Result<DqnLoss, NetworkError> {
    let mut grads = Gradients::zeros_like(online);
    if batch.is_empty() {
        return Ok(DqnLoss { loss: 0.0, grads });
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for e in batch {
        let y = td_target(target, e, gamma)?;
        let cache = online.forward_raw(&e.features, e.focus)?;
        let q = *cache.outputs.get(e.action).ok_or_else(|| {
            NetworkError::Shape(format!("action {} out of {} outputs", e.action, cache.outputs.len()))
        })?;
        let diff = q - y;
        loss += diff * diff * inv;
        let mut d = vec![0.0; cache.outputs.len()];
        d[e.action] = 2.0 * diff * inv;
        online.backward_into(&cache, &d, &mut grads);
    }
    Ok(DqnLoss { loss, grads })
}
