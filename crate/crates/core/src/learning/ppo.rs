//! Proximal policy optimization: clipped surrogate, critic regression and
//! entropy bonus, with separate actor and critic gradients.

use super::network::{masked_softmax, Gradients, NetworkError, NetworkParams};

/// One on-policy sample with its Monte-Carlo return.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoSample {
    pub features: Vec<Vec<f64>>,
    pub focus: Option<usize>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub old_log_prob: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoCoefficients {
    pub clip: f64,
    pub entropy: f64,
    pub normalize_advantage: bool,
}

#[derive(Clone, Debug)]
pub struct PpoLoss {
    /// `actor_loss + critic_loss`.
    pub loss: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub actor_grads: Gradients,
    pub critic_grads: Gradients,
}

/// Shannon entropy of a distribution, ignoring zero entries.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Advantages `ret - V(s)`, standardized when requested and the batch has
/// more than one sample.
pub fn advantages(returns: &[f64], values: &[f64], normalize: bool) -> Vec<f64> {
    let mut adv: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    if normalize && adv.len() > 1 {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
    }
    adv
}

pub fn ppo_loss(
    actor: &NetworkParams,
    critic: &NetworkParams,
    batch: &[PpoSample],
    coef: PpoCoefficients,
) -> Result<PpoLoss, NetworkError> {
    let mut actor_grads = Gradients::zeros_like(actor);
    let mut critic_grads = Gradients::zeros_like(critic);
    if batch.is_empty() {
        return Ok(PpoLoss {
            loss: 0.0,
            actor_loss: 0.0,
            critic_loss: 0.0,
            entropy: 0.0,
            actor_grads,
            critic_grads,
        });
    }
    let inv = 1.0 / batch.len() as f64;

    let mut critic_caches = Vec::with_capacity(batch.len());
    let mut values = Vec::with_capacity(batch.len());
    for s in batch {
        let cache = critic.forward_raw(&s.features, s.focus)?;
        values.push(cache.outputs[0]);
        critic_caches.push(cache);
    }
    let mut critic_loss = 0.0;
    for ((s, cache), v) in batch.iter().zip(&critic_caches).zip(&values) {
        let diff = s.ret - v;
        critic_loss += diff * diff * inv;
        critic.backward_into(cache, &[-2.0 * diff * inv], &mut critic_grads);
    }

    let adv = advantages(&batch.iter().map(|s| s.ret).collect::<Vec<_>>(), &values, coef.normalize_advantage);
    let mut actor_loss = 0.0;
    let mut mean_entropy = 0.0;
    for (s, &a) in batch.iter().zip(&adv) {
        let cache = actor.forward_raw(&s.features, s.focus)?;
        if s.mask.len() != cache.outputs.len() || !s.mask.get(s.action).copied().unwrap_or(false) {
            return Err(NetworkError::Shape(format!(
                "action {} not available under a mask of length {}",
                s.action,
                s.mask.len()
            )));
        }
        let p = masked_softmax(&cache.outputs, &s.mask, 1.0);
        let log_p = p[s.action].max(f64::MIN_POSITIVE).ln();
        let ratio = (log_p - s.old_log_prob).exp();
        let clipped = ratio.clamp(1.0 - coef.clip, 1.0 + coef.clip);
        let surr = (ratio * a).min(clipped * a);
        // the unclipped branch is active unless clipping strictly lowers it
        let d_surr_d_logp = if ratio * a <= clipped * a { ratio * a } else { 0.0 };
        let h = entropy(&p);
        actor_loss += (-surr - coef.entropy * h) * inv;
        mean_entropy += h * inv;

        let mut d = vec![0.0; p.len()];
        for k in 0..p.len() {
            if !s.mask[k] {
                continue;
            }
            let indicator = if k == s.action { 1.0 } else { 0.0 };
            let d_logp = indicator - p[k];
            let log_pk = if p[k] > 0.0 { p[k].ln() } else { 0.0 };
            let d_h = -p[k] * (log_pk + h);
            d[k] = (-d_surr_d_logp * d_logp - coef.entropy * d_h) * inv;
        }
        actor.backward_into(&cache, &d, &mut actor_grads);
    }
    Ok(PpoLoss {
        loss: actor_loss + critic_loss,
        actor_loss,
        critic_loss,
        entropy: mean_entropy,
        actor_grads,
        critic_grads,
    })
}
