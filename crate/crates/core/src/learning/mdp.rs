//! Markov decision process derived from a domain model.
//!
//! States are model states and actions map one-to-one onto transitions:
//! routing actions are customer indices, packing actions are `0 = skip` and
//! `1 = take`. Inapplicable actions are masked. State constraints are not
//! part of the MDP. Rewards are the transition costs scaled by `beta`
//! (negated for minimization); the base cost is folded into the reward of
//! the step that reaches a base state.

use std::sync::Arc;

use thiserror::Error;

use crate::domains::{DomainTag, Instance};
use crate::model::{Direction, Model, State, TransitionId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("action {action} is masked")]
    InvalidAction { action: usize },
    #[error("domain mismatch: instance is {instance}, requested {requested}")]
    DomainMismatch { instance: DomainTag, requested: DomainTag },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next: State,
    pub reward: f64,
    pub terminal: bool,
    pub next_mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Mdp {
    instance: Arc<Instance>,
    model: Arc<Model>,
    beta: f64,
    /// Per-step completion bonus for TSPTW, in cost units.
    ub_cost: Option<f64>,
}

impl Mdp {
    /// Derives the MDP for `instance`, checking it belongs to `tag`.
    pub fn new(instance: Arc<Instance>, tag: DomainTag, beta: f64) -> Result<Self, MdpError> {
        if instance.tag() != tag {
            return Err(MdpError::DomainMismatch {
                instance: instance.tag(),
                requested: tag,
            });
        }
        let model = instance
            .build_model()
            .map_err(|e| MdpError::InvalidInstance(e.to_string()))?;
        let ub_cost = match instance.as_ref() {
            Instance::Tsptw(t) => Some((t.n() as f64 + 1.0) * t.tsp.max_travel()),
            _ => None,
        };
        Ok(Mdp {
            instance,
            model: Arc::new(model),
            beta,
            ub_cost,
        })
    }

    pub fn with_model(instance: Arc<Instance>, model: Arc<Model>, beta: f64) -> Self {
        let ub_cost = match instance.as_ref() {
            Instance::Tsptw(t) => Some((t.n() as f64 + 1.0) * t.tsp.max_travel()),
            _ => None,
        };
        Mdp {
            instance,
            model,
            beta,
            ub_cost,
        }
    }

    pub fn tag(&self) -> DomainTag {
        self.instance.tag()
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ub_cost(&self) -> Option<f64> {
        self.ub_cost
    }

    pub fn initial_state(&self) -> State {
        self.model.target().clone()
    }

    pub fn num_actions(&self) -> usize {
        if self.tag().is_routing() {
            self.instance.n()
        } else {
            2
        }
    }

    pub fn action_of(&self, id: TransitionId) -> usize {
        if self.tag().is_routing() {
            id.param.expect("routing transitions are parameterized")
        } else if id.family == 0 {
            1
        } else {
            0
        }
    }

    pub fn transition_of(&self, action: usize) -> TransitionId {
        if self.tag().is_routing() {
            TransitionId {
                family: 0,
                param: Some(action),
            }
        } else {
            TransitionId {
                family: if action == 1 { 0 } else { 1 },
                param: None,
            }
        }
    }

    pub fn mask(&self, state: &State) -> Vec<bool> {
        let mut mask = vec![false; self.num_actions()];
        for id in self.model.applicable_unchecked(state) {
            mask[self.action_of(id)] = true;
        }
        mask
    }

    pub fn features(&self, state: &State) -> Vec<Vec<f64>> {
        self.instance.features(state)
    }

    /// Row a pooled head attends to: the current location or current item.
    pub fn focus(&self, state: &State) -> Option<usize> {
        let idx = state.element(1);
        (idx < self.instance.n()).then_some(idx)
    }

    /// Terminal iff a base case holds or no action is applicable.
    pub fn is_terminal(&self, state: &State) -> bool {
        self.model.is_base(state) || self.model.applicable_unchecked(state).is_empty()
    }

    fn signed(&self, cost: f64) -> f64 {
        match self.model.direction() {
            Direction::Minimize => -cost,
            Direction::Maximize => cost,
        }
    }

    /// Reward of taking an (applicable) action, including the folded base
    /// cost when the successor is a base state.
    pub fn reward(&self, state: &State, action: usize) -> Result<f64, MdpError> {
        Ok(self.step(state, action)?.reward)
    }

    pub fn step(&self, state: &State, action: usize) -> Result<Step, MdpError> {
        let mask = self.mask(state);
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(MdpError::InvalidAction { action });
        }
        let id = self.transition_of(action);
        let cost = self.model.cost_unchecked(state, id);
        let next = self.model.successor_unchecked(state, id);
        let mut reward = self.signed(cost);
        if let Some(ub) = self.ub_cost {
            reward += ub;
        }
        let base = self.model.base_cost(&next);
        if let Some(b) = base {
            reward += self.signed(b);
        }
        let next_mask = self.mask(&next);
        let terminal = base.is_some() || !next_mask.iter().any(|&m| m);
        Ok(Step {
            next,
            reward: self.beta * reward,
            terminal,
            next_mask,
        })
    }
}
