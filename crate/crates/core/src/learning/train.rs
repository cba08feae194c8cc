//! Training loops for DQN and PPO over randomly generated instances.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::dqn::{dqn_loss, Experience};
use super::mdp::{Mdp, MdpError};
use super::network::{masked_softmax, Architecture, HeadKind, NetworkError, NetworkParams};
use super::ppo::{ppo_loss, PpoCoefficients, PpoSample};
use super::replay::ReplayBuffer;
use crate::domains::{DomainError, DomainTag, GeneratorParams, Instance};
use crate::model::TransitionId;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at episode {episode}: {detail}")]
    Diverged { episode: usize, detail: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dqn,
    Ppo,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ppo => "ppo",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(Algorithm::Dqn),
            "ppo" => Ok(Algorithm::Ppo),
            other => Err(format!("unknown training algorithm `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub arch: Architecture,
    /// Reward scaling factor.
    pub beta: f64,
    /// Softmax temperature of DQN exploration.
    pub temperature: f64,
    pub entropy_coef: f64,
    pub clip: f64,
    /// PPO passes over each rollout batch.
    pub epochs: usize,
    pub gamma: f64,
    /// Environment steps between DQN target-network syncs.
    pub target_sync: usize,
    pub episodes: usize,
    pub seed: u64,
    pub replay_capacity: usize,
    /// Episodes collected per PPO update.
    pub episodes_per_update: usize,
    pub normalize_advantage: bool,
    pub max_grad_norm: Option<f64>,
    /// Wall-clock budget; training stops after the episode that exceeds it.
    pub time_limit_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            arch: Architecture::default(),
            beta: 1e-3,
            temperature: 10.0,
            entropy_coef: 1e-3,
            clip: 0.1,
            epochs: 3,
            gamma: 1.0,
            target_sync: 500,
            episodes: 1000,
            seed: 0,
            replay_capacity: 100_000,
            episodes_per_update: 16,
            normalize_advantage: true,
            max_grad_norm: None,
            time_limit_secs: None,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters for `domain` at size `n`: the closest size column of
    /// the reference settings, with the per-domain reward scaling.
    pub fn for_domain(domain: DomainTag, algo: Algorithm, n: usize) -> Self {
        let large = match domain {
            DomainTag::Knapsack => n > 75,
            _ => n > 35,
        };
        let arch = |embed_dim, hidden_layers, hidden_dim| Architecture {
            embed_dim,
            hidden_dim,
            hidden_layers,
        };
        // (batch, lr, arch, temperature, epochs)
        let (batch_size, learning_rate, arch, temperature, epochs) = match (domain, algo, large) {
            (DomainTag::Tsp, Algorithm::Dqn, false) => (128, 1e-4, arch(64, 3, 64), 10.0, 3),
            (DomainTag::Tsp, Algorithm::Dqn, true) => (256, 1e-4, arch(64, 3, 64), 2.0, 3),
            (DomainTag::Tsp, Algorithm::Ppo, _) => (256, 1e-4, arch(128, 4, 128), 1.0, 3),
            (DomainTag::Tsptw, Algorithm::Dqn, false) => (32, 1e-4, arch(32, 2, 32), 10.0, 3),
            (DomainTag::Tsptw, Algorithm::Dqn, true) => (64, 1e-4, arch(64, 3, 64), 10.0, 3),
            (DomainTag::Tsptw, Algorithm::Ppo, false) => (128, 1e-4, arch(256, 4, 256), 1.0, 3),
            (DomainTag::Tsptw, Algorithm::Ppo, true) => (64, 1e-4, arch(128, 4, 128), 1.0, 3),
            (DomainTag::Knapsack, Algorithm::Dqn, false) => (128, 1e-4, arch(128, 2, 128), 2.0, 4),
            (DomainTag::Knapsack, Algorithm::Dqn, true) => (128, 1e-4, arch(128, 3, 128), 2.0, 4),
            (DomainTag::Knapsack, Algorithm::Ppo, _) => (128, 1e-3, arch(128, 3, 128), 1.0, 4),
            (DomainTag::Portfolio, Algorithm::Dqn, false) => (64, 1e-5, arch(40, 2, 128), 10.0, 4),
            (DomainTag::Portfolio, Algorithm::Dqn, true) => (128, 1e-5, arch(40, 3, 256), 10.0, 4),
            (DomainTag::Portfolio, Algorithm::Ppo, _) => (128, 1e-5, arch(40, 2, 128), 1.0, 4),
        };
        TrainConfig {
            batch_size,
            learning_rate,
            arch,
            beta: domain.default_beta(),
            temperature,
            epochs,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_owned()));
        if self.batch_size == 0 || self.epochs == 0 || self.episodes == 0 || self.target_sync == 0 {
            return bad("batch size, epochs, episodes and target sync must be positive");
        }
        if self.replay_capacity == 0 || self.episodes_per_update == 0 {
            return bad("replay capacity and episodes per update must be positive");
        }
        if self.arch.embed_dim == 0 || self.arch.hidden_dim == 0 || self.arch.hidden_layers == 0 {
            return bad("layer sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.beta > 0.0 && self.temperature > 0.0) {
            return bad("learning rate, beta and temperature must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy coefficient must be non-negative");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if matches!(self.max_grad_norm, Some(m) if !(m > 0.0)) {
            return bad("max gradient norm must be positive");
        }
        if matches!(self.time_limit_secs, Some(t) if !(t > 0.0)) {
            return bad("time limit must be positive");
        }
        Ok(())
    }
}

/// Where training episodes come from.
#[derive(Clone, Debug, PartialEq)]
pub enum InstanceSource {
    Fixed(Arc<Instance>),
    Random {
        domain: DomainTag,
        n: usize,
        params: GeneratorParams,
    },
}

impl InstanceSource {
    pub fn domain(&self) -> DomainTag {
        match self {
            InstanceSource::Fixed(inst) => inst.tag(),
            InstanceSource::Random { domain, .. } => *domain,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Result<Arc<Instance>, DomainError> {
        match self {
            InstanceSource::Fixed(inst) => Ok(Arc::clone(inst)),
            InstanceSource::Random { domain, n, params } => {
                Ok(Arc::new(Instance::generate(*domain, *n, rng.gen(), params)?))
            }
        }
    }
}

/// Per-episode and per-update statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Undiscounted sum of rewards of each training episode.
    pub episode_returns: Vec<f64>,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DqnOutcome {
    pub params: NetworkParams,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct PpoOutcome {
    pub actor: NetworkParams,
    pub critic: NetworkParams,
    pub log: TrainLog,
}

fn sample_action<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs)
        .map(|d| d.sample(rng))
        .unwrap_or_else(|_| probs.iter().position(|&p| p > 0.0).unwrap_or(0))
}

fn deadline(config: &TrainConfig) -> Option<Instant> {
    config.time_limit_secs.map(|t| Instant::now() + Duration::from_secs_f64(t))
}

fn past(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

fn check_finite(value: f64, episode: usize, what: &str) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged {
            episode,
            detail: format!("{what} is {value}"),
        })
    }
}

pub fn train_dqn(source: &InstanceSource, config: &TrainConfig) -> Result<DqnOutcome, TrainError> {
    config.validate()?;
    let domain = source.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::new(domain, HeadKind::Q, Instance::feature_width(domain), config.arch, rng.gen());
    let mut target = params.clone();
    let mut adam = AdamState::new(&params);
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut log = TrainLog::default();
    let mut steps = 0usize;
    let deadline = deadline(config);

    for episode in 0..config.episodes {
        let mdp = Mdp::new(source.sample(&mut rng)?, domain, config.beta)?;
        let mut state = mdp.initial_state();
        let mut mask = mdp.mask(&state);
        let mut features = mdp.features(&state);
        let mut total = 0.0;
        while mask.iter().any(|&m| m) && !mdp.model().is_base(&state) {
            let focus = mdp.focus(&state);
            let q = params.forward_raw(&features, focus)?.outputs;
            let action = sample_action(&masked_softmax(&q, &mask, config.temperature), &mut rng);
            let step = mdp.step(&state, action)?;
            let next_features = mdp.features(&step.next);
            total += step.reward;
            buffer.push(Experience {
                features: std::mem::take(&mut features),
                focus,
                action,
                reward: step.reward,
                next_features: next_features.clone(),
                next_focus: mdp.focus(&step.next),
                next_mask: step.next_mask.clone(),
                terminal: step.terminal,
            });
            steps += 1;
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, &mut rng);
                let mut out = dqn_loss(&params, &target, &batch, config.gamma)?;
                check_finite(out.loss, episode, "TD loss")?;
                if let Some(m) = config.max_grad_norm {
                    clip_grad_norm(&mut out.grads, m);
                }
                adam_step(&mut params, &out.grads, &mut adam, config.learning_rate);
                log.losses.push(out.loss);
            }
            if steps.is_multiple_of(config.target_sync) {
                target = params.clone();
            }
            if step.terminal {
                break;
            }
            state = step.next;
            mask = step.next_mask;
            features = next_features;
        }
        check_finite(total, episode, "episode return")?;
        log.episode_returns.push(total);
        if past(deadline) {
            break;
        }
    }
    Ok(DqnOutcome { params, log })
}

pub fn train_ppo(source: &InstanceSource, config: &TrainConfig) -> Result<PpoOutcome, TrainError> {
    config.validate()?;
    let domain = source.domain();
    let width = Instance::feature_width(domain);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut actor = NetworkParams::new(domain, HeadKind::Actor, width, config.arch, rng.gen());
    let mut critic = NetworkParams::new(domain, HeadKind::Critic, width, config.arch, rng.gen());
    let mut actor_adam = AdamState::new(&actor);
    let mut critic_adam = AdamState::new(&critic);
    let coef = PpoCoefficients {
        clip: config.clip,
        entropy: config.entropy_coef,
        normalize_advantage: config.normalize_advantage,
    };
    let mut log = TrainLog::default();
    let mut episode = 0;
    let deadline = deadline(config);

    while episode < config.episodes {
        let mut samples = Vec::new();
        let batch_end = (episode + config.episodes_per_update).min(config.episodes);
        while episode < batch_end {
            let mdp = Mdp::new(source.sample(&mut rng)?, domain, config.beta)?;
            let mut state = mdp.initial_state();
            let mut episode_samples = Vec::new();
            let mut rewards = Vec::new();
            let mut mask = mdp.mask(&state);
            while mask.iter().any(|&m| m) && !mdp.model().is_base(&state) {
                let features = mdp.features(&state);
                let focus = mdp.focus(&state);
                let logits = actor.forward_raw(&features, focus)?.outputs;
                let probs = masked_softmax(&logits, &mask, 1.0);
                let action = sample_action(&probs, &mut rng);
                let step = mdp.step(&state, action)?;
                rewards.push(step.reward);
                episode_samples.push(PpoSample {
                    features,
                    focus,
                    mask,
                    action,
                    old_log_prob: probs[action].max(f64::MIN_POSITIVE).ln(),
                    ret: 0.0,
                });
                if step.terminal {
                    break;
                }
                state = step.next;
                mask = step.next_mask;
            }
            let mut ret = 0.0;
            for (sample, r) in episode_samples.iter_mut().zip(&rewards).rev() {
                ret = r + config.gamma * ret;
                sample.ret = ret;
            }
            let total: f64 = rewards.iter().sum();
            check_finite(total, episode, "episode return")?;
            log.episode_returns.push(total);
            samples.extend(episode_samples);
            episode += 1;
        }
        for _ in 0..config.epochs {
            samples.shuffle(&mut rng);
            for chunk in samples.chunks(config.batch_size) {
                let mut out = ppo_loss(&actor, &critic, chunk, coef)?;
                check_finite(out.loss, episode, "PPO loss")?;
                if let Some(m) = config.max_grad_norm {
                    clip_grad_norm(&mut out.actor_grads, m);
                    clip_grad_norm(&mut out.critic_grads, m);
                }
                adam_step(&mut actor, &out.actor_grads, &mut actor_adam, config.learning_rate);
                adam_step(&mut critic, &out.critic_grads, &mut critic_adam, config.learning_rate);
                log.losses.push(out.loss);
            }
        }
        if past(deadline) {
            break;
        }
    }
    Ok(PpoOutcome { actor, critic, log })
}

/// Result of following a network greedily from the target state.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyRollout {
    pub transitions: Vec<TransitionId>,
    pub total_reward: f64,
    /// Whether the rollout ended in a base state.
    pub reached_base: bool,
}

/// Follows `argmax` of a Q or actor network (lowest index on ties) until
/// the episode ends.
pub fn greedy_rollout(mdp: &Mdp, params: &NetworkParams) -> Result<GreedyRollout, TrainError> {
    let mut state = mdp.initial_state();
    let mut transitions = Vec::new();
    let mut total_reward = 0.0;
    loop {
        if mdp.model().is_base(&state) {
            return Ok(GreedyRollout {
                transitions,
                total_reward,
                reached_base: true,
            });
        }
        let mask = mdp.mask(&state);
        let outputs = params.forward_raw(&mdp.features(&state), mdp.focus(&state))?.outputs;
        let Some(action) = (0..mask.len())
            .filter(|&a| mask[a])
            .fold(None, |best: Option<usize>, a| match best {
                Some(b) if outputs[b] >= outputs[a] => Some(b),
                _ => Some(a),
            })
        else {
            return Ok(GreedyRollout {
                transitions,
                total_reward,
                reached_base: false,
            });
        };
        let step = mdp.step(&state, action)?;
        transitions.push(mdp.transition_of(action));
        total_reward += step.reward;
        state = step.next;
    }
}
