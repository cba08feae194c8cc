//! Node evaluation: how successors are scored for ordering in the open list.
//!
//! Every evaluator sees the parent once per expansion together with all of
//! its successors, which lets the policy network run a single forward pass
//! per expansion while value networks score each successor.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::domains::{DomainTag, Instance};
use crate::learning::mdp::Mdp;
use crate::learning::network::{masked_softmax, HeadKind, NetworkError, NetworkParams};
use crate::model::{saturating_add, Direction, Model, State, TransitionId, VariableKind};

/// Floor applied to policy probabilities and their running product.
pub const POLICY_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("greedy rollout exceeded {cap} steps")]
    MalformedPolicy { cap: usize },
    #[error("network is for {network} but the instance is {instance}")]
    DomainMismatch { network: DomainTag, instance: DomainTag },
    #[error("a {expected} network is required, got {found:?}")]
    WrongHead { expected: &'static str, found: HeadKind },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// The node being expanded.
#[derive(Clone, Copy, Debug)]
pub struct ParentView<'a> {
    pub state: &'a State,
    pub g: f64,
    pub pi_acc: f64,
}

/// A generated successor awaiting evaluation. The search fills everything
/// up to `eta`; the evaluator sets `h`, `f` and `pi_acc`.
#[derive(Clone, Debug)]
pub struct Child {
    pub state: State,
    pub transition: TransitionId,
    pub g: f64,
    /// Dual bound of the successor, if the model declares one.
    pub eta: Option<f64>,
    pub h: f64,
    pub f: f64,
    pub pi_acc: f64,
}

impl Child {
    pub fn new(state: State, transition: TransitionId, g: f64, eta: Option<f64>) -> Self {
        Child {
            state,
            transition,
            g,
            eta,
            h: 0.0,
            f: 0.0,
            pi_acc: 1.0,
        }
    }
}

pub trait Evaluator: Send + Sync {
    /// Scores `children`, all successors of `parent`. A better `f` is smaller
    /// under minimization and larger under maximization.
    fn evaluate(&self, model: &Model, parent: ParentView<'_>, children: &mut [Child]) -> Result<(), GuidanceError>;
}

/// `g + eta`, with a missing bound read as zero.
pub fn f_dual(g: f64, eta: Option<f64>) -> f64 {
    saturating_add(g, eta.unwrap_or(0.0))
}

/// `Vθ(s)`: the best action value over applicable actions, with its index.
pub fn v_theta(q: &[f64], mask: &[bool]) -> Option<(usize, f64)> {
    q.iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .fold(None, |best, (a, (&v, _))| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((a, v)),
        })
}

/// Value guidance: `β·g - Vθ` under minimization, `β·g + Vθ` under
/// maximization.
pub fn f_value(g_scaled: f64, v: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Minimize => g_scaled - v,
        Direction::Maximize => g_scaled + v,
    }
}

/// Policy guidance: `(g + η) / π†` under minimization, `(g + η)·π†` under
/// maximization.
pub fn f_policy(g: f64, eta: Option<f64>, pi_acc: f64, direction: Direction) -> f64 {
    let base = f_dual(g, eta);
    match direction {
        Direction::Minimize => base / pi_acc,
        Direction::Maximize => base * pi_acc,
    }
}

/// Running policy product of a child, floored at [`POLICY_FLOOR`].
pub fn accumulate_policy(parent_pi: f64, pi: f64) -> f64 {
    (parent_pi * pi.max(POLICY_FLOOR)).max(POLICY_FLOOR)
}

/// Upper bound on the length of any transition sequence, used to stop
/// runaway rollouts.
pub fn rollout_cap(model: &Model) -> usize {
    1 + model
        .schema()
        .iter()
        .map(|v| match v.kind {
            VariableKind::Element { bound } => bound,
            VariableKind::Set { universe } => universe,
            VariableKind::Numeric => 0,
        })
        .sum::<usize>()
}

/// Cost of following `policy` from `state` to a base state: transition costs
/// plus the base cost. Dead ends (no choice, an inapplicable choice or a
/// violated constraint) yield the direction's infeasibility sentinel.
pub fn h_greedy_rollout<P>(model: &Model, state: &State, mut policy: P) -> Result<f64, GuidanceError>
where
    P: FnMut(&State) -> Option<TransitionId>,
{
    let cap = rollout_cap(model);
    let infeasible = model.direction().infeasible();
    let mut current = state.clone();
    let mut total = 0.0;
    for _ in 0..=cap {
        if !model.satisfies_constraints(&current) {
            return Ok(infeasible);
        }
        if let Some(base) = model.base_cost(&current) {
            return Ok(saturating_add(total, base));
        }
        let Some(id) = policy(&current) else {
            return Ok(infeasible);
        };
        if !model.is_applicable(&current, id) {
            return Ok(infeasible);
        }
        total = saturating_add(total, model.cost_unchecked(&current, id));
        current = model.successor_unchecked(&current, id);
    }
    Err(GuidanceError::MalformedPolicy { cap })
}

/// Which guidance to use, as named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceKind {
    Dual,
    Zero,
    Greedy,
    Dqn,
    Ppo,
}

impl GuidanceKind {
    pub const ALL: [GuidanceKind; 5] = [
        GuidanceKind::Dual,
        GuidanceKind::Zero,
        GuidanceKind::Greedy,
        GuidanceKind::Dqn,
        GuidanceKind::Ppo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceKind::Dual => "dual",
            GuidanceKind::Zero => "zero",
            GuidanceKind::Greedy => "greedy",
            GuidanceKind::Dqn => "dqn",
            GuidanceKind::Ppo => "ppo",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, GuidanceKind::Dqn | GuidanceKind::Ppo)
    }
}

impl fmt::Display for GuidanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GuidanceKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown guidance `{s}` (expected dual, zero, greedy, dqn or ppo)"))
    }
}

/// The built-in evaluators.
#[derive(Clone, Debug)]
pub enum Guidance {
    /// `f = g + η`.
    DualBound,
    /// `f = g`.
    ZeroH,
    /// `f = g + h` with `h` the cost of rolling out the domain's greedy
    /// heuristic.
    GreedyRollout { instance: Arc<Instance> },
    /// Q-network guidance on β-scaled path costs. `h` is the β-scaled
    /// estimate of the remaining cost (minimization) or profit
    /// (maximization).
    ValueNet { params: Arc<NetworkParams>, mdp: Mdp },
    /// Policy-network guidance on unscaled `g + η`.
    PolicyNet { params: Arc<NetworkParams>, mdp: Mdp },
}

impl Guidance {
    pub fn greedy(instance: Arc<Instance>) -> Self {
        Guidance::GreedyRollout { instance }
    }

    fn learned(
        params: Arc<NetworkParams>,
        instance: Arc<Instance>,
        model: Arc<Model>,
        beta: f64,
        expected: HeadKind,
    ) -> Result<Mdp, GuidanceError> {
        if params.domain != instance.tag() {
            return Err(GuidanceError::DomainMismatch {
                network: params.domain,
                instance: instance.tag(),
            });
        }
        if params.head != expected {
            return Err(GuidanceError::WrongHead {
                expected: if expected == HeadKind::Q { "Q" } else { "policy" },
                found: params.head,
            });
        }
        params.check_shapes()?;
        if params.feature_width() != Instance::feature_width(instance.tag()) {
            return Err(NetworkError::Shape(format!(
                "network reads {} features, the domain provides {}",
                params.feature_width(),
                Instance::feature_width(instance.tag())
            ))
            .into());
        }
        Ok(Mdp::with_model(instance, model, beta))
    }

    /// Value guidance with reward scaling `beta`.
    pub fn value_net(
        params: Arc<NetworkParams>,
        instance: Arc<Instance>,
        model: Arc<Model>,
        beta: f64,
    ) -> Result<Self, GuidanceError> {
        let mdp = Self::learned(Arc::clone(&params), instance, model, beta, HeadKind::Q)?;
        Ok(Guidance::ValueNet { params, mdp })
    }

    pub fn policy_net(params: Arc<NetworkParams>, instance: Arc<Instance>, model: Arc<Model>) -> Result<Self, GuidanceError> {
        let beta = instance.tag().default_beta();
        let mdp = Self::learned(Arc::clone(&params), instance, model, beta, HeadKind::Actor)?;
        Ok(Guidance::PolicyNet { params, mdp })
    }

    pub fn kind(&self) -> GuidanceKind {
        match self {
            Guidance::DualBound => GuidanceKind::Dual,
            Guidance::ZeroH => GuidanceKind::Zero,
            Guidance::GreedyRollout { .. } => GuidanceKind::Greedy,
            Guidance::ValueNet { .. } => GuidanceKind::Dqn,
            Guidance::PolicyNet { .. } => GuidanceKind::Ppo,
        }
    }
}

impl Evaluator for Guidance {
    fn evaluate(&self, model: &Model, parent: ParentView<'_>, children: &mut [Child]) -> Result<(), GuidanceError> {
        let direction = model.direction();
        match self {
            Guidance::DualBound => {
                for c in children {
                    c.h = c.eta.unwrap_or(0.0);
                    c.f = f_dual(c.g, c.eta);
                    c.pi_acc = parent.pi_acc;
                }
            }
            Guidance::ZeroH => {
                for c in children {
                    c.h = 0.0;
                    c.f = c.g;
                    c.pi_acc = parent.pi_acc;
                }
            }
            Guidance::GreedyRollout { instance } => {
                for c in children {
                    c.h = h_greedy_rollout(model, &c.state, |s| instance.greedy_successor(s).ok())?;
                    c.f = saturating_add(c.g, c.h);
                    c.pi_acc = parent.pi_acc;
                }
            }
            Guidance::ValueNet { params, mdp } => {
                for c in children {
                    let v = match model.base_cost(&c.state) {
                        Some(base) => mdp.beta()
                            * match direction {
                                Direction::Minimize => -base,
                                Direction::Maximize => base,
                            },
                        None => {
                            let mask = mdp.mask(&c.state);
                            let q = params.forward_raw(&mdp.features(&c.state), mdp.focus(&c.state))?.outputs;
                            match v_theta(&q, &mask) {
                                Some((_, v)) => v,
                                None => {
                                    c.h = direction.infeasible();
                                    c.f = direction.infeasible();
                                    c.pi_acc = parent.pi_acc;
                                    continue;
                                }
                            }
                        }
                    };
                    c.h = match direction {
                        Direction::Minimize => -v,
                        Direction::Maximize => v,
                    };
                    c.f = f_value(mdp.beta() * c.g, v, direction);
                    c.pi_acc = parent.pi_acc;
                }
            }
            Guidance::PolicyNet { params, mdp } => {
                if children.is_empty() {
                    return Ok(());
                }
                let mask = mdp.mask(parent.state);
                let logits = params.forward_raw(&mdp.features(parent.state), mdp.focus(parent.state))?.outputs;
                let probs = masked_softmax(&logits, &mask, 1.0);
                for c in children {
                    let pi = probs.get(mdp.action_of(c.transition)).copied().unwrap_or(0.0);
                    c.pi_acc = accumulate_policy(parent.pi_acc, pi);
                    c.h = c.eta.unwrap_or(0.0);
                    c.f = f_policy(c.g, c.eta, c.pi_acc, direction);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::network::Architecture;
    use crate::model::{bitset, Value};

    fn fixture(name: &str) -> (Arc<Instance>, Arc<Model>) {
        let inst = Arc::new(Instance::fixture(name).unwrap());
        let model = Arc::new(inst.build_model().unwrap());
        (inst, model)
    }

    #[test]
    fn dual_and_zero() {
        assert_eq!(f_dual(3.0, Some(2.0)), 5.0);
        assert_eq!(f_dual(3.0, None), 3.0);
        assert_eq!(f_dual(3.0, Some(f64::INFINITY)), f64::INFINITY);
    }

    #[test]
    fn value_formula_and_masking() {
        assert_eq!(f_value(0.3, v_theta(&[0.5, 0.2], &[true, true]).unwrap().1, Direction::Maximize), 0.8);
        assert_eq!(v_theta(&[0.5, 0.2], &[false, true]), Some((1, 0.2)));
        assert_eq!(v_theta(&[0.5, 0.2], &[false, false]), None);
    }

    #[test]
    fn policy_formula() {
        assert_eq!(f_policy(3.0, Some(1.0), 0.5, Direction::Minimize), 8.0);
        assert_eq!(f_policy(3.0, Some(1.0), 0.5, Direction::Maximize), 2.0);
        assert_eq!(f_policy(3.0, Some(1.0), 1.0, Direction::Minimize), 4.0);
        assert_eq!(accumulate_policy(0.5, 0.0), POLICY_FLOOR);
        assert_eq!(accumulate_policy(0.5, 0.5), 0.25);
        assert_eq!(accumulate_policy(POLICY_FLOOR, 1e-3), POLICY_FLOOR);
    }

    #[test]
    fn greedy_rollouts_on_fixtures() {
        let (inst, model) = fixture("fix-tsp3");
        let h = h_greedy_rollout(&model, model.target(), |s| inst.greedy_successor(s).ok()).unwrap();
        assert_eq!(h, 4.0);
        let (inst, model) = fixture("fix-kp2");
        let h = h_greedy_rollout(&model, model.target(), |s| inst.greedy_successor(s).ok()).unwrap();
        assert_eq!(h, 3.0);
        let base = State::new(vec![Value::Numeric(3.0), Value::Element(2)]);
        assert_eq!(h_greedy_rollout(&model, &base, |_| None).unwrap(), 0.0);
    }

    #[test]
    fn dead_ends_are_infinite_and_loops_are_malformed() {
        let (_, model) = fixture("fix-tsp3");
        assert_eq!(h_greedy_rollout(&model, model.target(), |_| None).unwrap(), f64::INFINITY);
        let looping = Model::builder(
            "loop",
            vec![crate::model::VariableSchema::element("x", 2)],
            State::new(vec![Value::Element(0)]),
            Direction::Minimize,
        )
        .transition(crate::model::Transition::new(
            "flip",
            crate::model::Grounding::Single,
            |_, _| true,
            |s: &State, _| State::new(vec![Value::Element(1 - s.element(0))]),
            |_, _| 1.0,
        ))
        .base_case(crate::model::BaseCase::new(|_| false, |_| 0.0))
        .build()
        .unwrap();
        let flip = TransitionId { family: 0, param: None };
        assert!(matches!(
            h_greedy_rollout(&looping, looping.target(), |_| Some(flip)),
            Err(GuidanceError::MalformedPolicy { .. })
        ));
    }

    #[test]
    fn zero_policy_reduces_to_dual_ordering() {
        let (inst, model) = fixture("fix-tsp3");
        let arch = Architecture::default();
        let actor = NetworkParams::new(DomainTag::Tsp, HeadKind::Actor, 6, arch, 0).zeroed();
        let g = Guidance::policy_net(Arc::new(actor), Arc::clone(&inst), Arc::clone(&model)).unwrap();
        let root = model.target().clone();
        let mut children: Vec<Child> = model
            .applicable_unchecked(&root)
            .into_iter()
            .map(|id| {
                let s = model.successor_unchecked(&root, id);
                let eta = model.dual_bound(&s);
                Child::new(s, id, model.cost_unchecked(&root, id), eta)
            })
            .collect();
        let parent = ParentView {
            state: &root,
            g: 0.0,
            pi_acc: 1.0,
        };
        g.evaluate(&model, parent, &mut children).unwrap();
        for c in &children {
            assert_eq!(c.pi_acc, 0.5);
            assert_eq!(c.f, f_dual(c.g, c.eta) / 0.5);
        }
        let mut dual = children.clone();
        Guidance::DualBound.evaluate(&model, parent, &mut dual).unwrap();
        let order = |cs: &[Child]| cs[0].f.partial_cmp(&cs[1].f);
        assert_eq!(order(&children), order(&dual));
    }

    #[test]
    fn value_guidance_scales_with_beta() {
        let (inst, model) = fixture("fix-kp2");
        let q = NetworkParams::new(DomainTag::Knapsack, HeadKind::Q, 8, Architecture::default(), 3);
        let mut q2 = q.clone();
        let last = q2.layers.last_mut().unwrap();
        last.weights.iter_mut().chain(last.bias.iter_mut()).for_each(|w| *w *= 2.0);
        let g1 = Guidance::value_net(Arc::new(q), Arc::clone(&inst), Arc::clone(&model), 1e-4).unwrap();
        let g2 = Guidance::value_net(Arc::new(q2), Arc::clone(&inst), Arc::clone(&model), 2e-4).unwrap();
        let root = model.target().clone();
        let make = || -> Vec<Child> {
            model
                .applicable_unchecked(&root)
                .into_iter()
                .map(|id| Child::new(model.successor_unchecked(&root, id), id, model.cost_unchecked(&root, id), None))
                .collect()
        };
        let parent = ParentView {
            state: &root,
            g: 0.0,
            pi_acc: 1.0,
        };
        let (mut a, mut b) = (make(), make());
        g1.evaluate(&model, parent, &mut a).unwrap();
        g2.evaluate(&model, parent, &mut b).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.f - 2.0 * x.f).abs() < 1e-15, "{} vs {}", y.f, x.f);
        }
    }

    #[test]
    fn value_guidance_uses_base_cost_at_base_states() {
        let (inst, model) = fixture("fix-tsp3");
        let q = NetworkParams::new(DomainTag::Tsp, HeadKind::Q, 6, Architecture::default(), 3);
        let g = Guidance::value_net(Arc::new(q), inst, Arc::clone(&model), 1e-3).unwrap();
        let parent_state = State::new(vec![Value::Set(bitset(3, [2])), Value::Element(1)]);
        let id = TransitionId { family: 0, param: Some(2) };
        let mut children = vec![Child::new(model.successor_unchecked(&parent_state, id), id, 3.0, None)];
        let parent = ParentView {
            state: &parent_state,
            g: 1.0,
            pi_acc: 1.0,
        };
        g.evaluate(&model, parent, &mut children).unwrap();
        // β·g + β·c20
        assert!((children[0].f - 1e-3 * (3.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_networks_are_rejected() {
        let (inst, model) = fixture("fix-tsp3");
        let kp = NetworkParams::new(DomainTag::Knapsack, HeadKind::Q, 8, Architecture::default(), 0);
        assert!(matches!(
            Guidance::value_net(Arc::new(kp), Arc::clone(&inst), Arc::clone(&model), 1e-3),
            Err(GuidanceError::DomainMismatch { .. })
        ));
        let actor = NetworkParams::new(DomainTag::Tsp, HeadKind::Actor, 6, Architecture::default(), 0);
        assert!(matches!(
            Guidance::value_net(Arc::new(actor), inst, model, 1e-3),
            Err(GuidanceError::WrongHead { .. })
        ));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("PPO".parse::<GuidanceKind>().unwrap(), GuidanceKind::Ppo);
        assert!("foo".parse::<GuidanceKind>().is_err());
    }
}
