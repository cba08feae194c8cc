//! Dynamic-programming models: state variables, transitions, base cases,
//! state constraints and dual bounds, plus a memoized Bellman oracle.
//!
//! Transitions are host closures. A transition may be a *family* grounded by
//! a parameter (for example "visit j" for every `j` in an unvisited set); the
//! family is grounded lazily against the state it is evaluated on.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Optimization direction of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// Value of a state from which no base state is reachable.
    pub fn infeasible(self) -> f64 {
        match self {
            Direction::Minimize => f64::INFINITY,
            Direction::Maximize => f64::NEG_INFINITY,
        }
    }

    /// `true` if `a` is strictly better than `b`.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Minimize => a < b,
            Direction::Maximize => a > b,
        }
    }

    /// The better of two values.
    pub fn best(self, a: f64, b: f64) -> f64 {
        if self.is_better(b, a) {
            b
        } else {
            a
        }
    }

    /// `true` if `value` is the infeasibility sentinel of this direction.
    pub fn is_infeasible(self, value: f64) -> bool {
        value == self.infeasible()
    }
}

/// Adds two costs, saturating on the infinite sentinels. `+inf` wins over a
/// simultaneous `-inf`, which never arises in well-formed models.
pub fn saturating_add(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY || b == f64::INFINITY {
        f64::INFINITY
    } else if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum VariableKind {
    /// Index in `0..bound`.
    Element { bound: usize },
    /// Subset of `0..universe`.
    Set { universe: usize },
    /// Double-precision scalar.
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub name: String,
    pub kind: VariableKind,
}

impl VariableSchema {
    pub fn element(name: &str, bound: usize) -> Self {
        VariableSchema {
            name: name.to_owned(),
            kind: VariableKind::Element { bound },
        }
    }

    pub fn set(name: &str, universe: usize) -> Self {
        VariableSchema {
            name: name.to_owned(),
            kind: VariableKind::Set { universe },
        }
    }

    pub fn numeric(name: &str) -> Self {
        VariableSchema {
            name: name.to_owned(),
            kind: VariableKind::Numeric,
        }
    }
}

/// Value of a single state variable. Numeric values compare and hash bitwise.
#[derive(Clone, Debug)]
pub enum Value {
    Element(usize),
    Set(FixedBitSet),
    Numeric(f64),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Element(a), Value::Element(b)) => a == b,
            (Value::Set(a), Value::Set(b)) => a == b,
            (Value::Numeric(a), Value::Numeric(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Element(e) => {
                0u8.hash(state);
                e.hash(state);
            }
            Value::Set(s) => {
                1u8.hash(state);
                s.hash(state);
            }
            Value::Numeric(x) => {
                2u8.hash(state);
                x.to_bits().hash(state);
            }
        }
    }
}

/// A complete assignment to the state variables of a model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct State {
    values: Vec<Value>,
}

impl State {
    pub fn new(values: Vec<Value>) -> Self {
        State { values }
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn arity(&self) -> usize {
        self.values.len()
    }

    pub fn element(&self, var: usize) -> usize {
        match &self.values[var] {
            Value::Element(e) => *e,
            other => panic!("variable {var} is not an element variable: {other:?}"),
        }
    }

    pub fn set(&self, var: usize) -> &FixedBitSet {
        match &self.values[var] {
            Value::Set(s) => s,
            other => panic!("variable {var} is not a set variable: {other:?}"),
        }
    }

    pub fn numeric(&self, var: usize) -> f64 {
        match &self.values[var] {
            Value::Numeric(x) => *x,
            other => panic!("variable {var} is not a numeric variable: {other:?}"),
        }
    }

    pub fn set_element(&mut self, var: usize, value: usize) {
        self.values[var] = Value::Element(value);
    }

    pub fn set_numeric(&mut self, var: usize, value: f64) {
        self.values[var] = Value::Numeric(value);
    }

    pub fn set_mut(&mut self, var: usize) -> &mut FixedBitSet {
        match &mut self.values[var] {
            Value::Set(s) => s,
            other => panic!("variable {var} is not a set variable: {other:?}"),
        }
    }
}

/// Builds a bitset over `0..universe` containing `members`.
pub fn bitset(universe: usize, members: impl IntoIterator<Item = usize>) -> FixedBitSet {
    let mut set = FixedBitSet::with_capacity(universe);
    for m in members {
        set.insert(m);
    }
    set
}

/// Identifies a grounded transition: the family index in declaration order
/// and, for parameterized families, the grounding parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransitionId {
    pub family: usize,
    pub param: Option<usize>,
}

/// How a transition family is grounded on a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grounding {
    /// A single, unparameterized transition.
    Single,
    /// One transition per member of the given set variable.
    SetMembers(usize),
    /// One transition per index in `0..n`.
    Range(usize),
}

type StatePred = Arc<dyn Fn(&State) -> bool + Send + Sync>;
type StateFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
type ParamPred = Arc<dyn Fn(&State, usize) -> bool + Send + Sync>;
type ParamEffect = Arc<dyn Fn(&State, usize) -> State + Send + Sync>;
type ParamCost = Arc<dyn Fn(&State, usize) -> f64 + Send + Sync>;

/// A transition family. Closures receive the grounding parameter (0 for
/// [`Grounding::Single`]).
#[derive(Clone)]
pub struct Transition {
    name: String,
    grounding: Grounding,
    forced: bool,
    precondition_label: String,
    precondition: ParamPred,
    effect: ParamEffect,
    cost: ParamCost,
}

impl Transition {
    pub fn new<P, E, C>(name: &str, grounding: Grounding, precondition: P, effect: E, cost: C) -> Self
    where
        P: Fn(&State, usize) -> bool + Send + Sync + 'static,
        E: Fn(&State, usize) -> State + Send + Sync + 'static,
        C: Fn(&State, usize) -> f64 + Send + Sync + 'static,
    {
        Transition {
            name: name.to_owned(),
            grounding,
            forced: false,
            precondition_label: String::new(),
            precondition: Arc::new(precondition),
            effect: Arc::new(effect),
            cost: Arc::new(cost),
        }
    }

    pub fn forced(mut self) -> Self {
        self.forced = true;
        self
    }

    /// Human-readable form of the precondition, used in validation reports.
    pub fn with_precondition_label(mut self, label: &str) -> Self {
        self.precondition_label = label.to_owned();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_forced(&self) -> bool {
        self.forced
    }

    pub fn grounding(&self) -> Grounding {
        self.grounding
    }

    pub fn precondition_label(&self) -> &str {
        &self.precondition_label
    }
}

impl fmt::Debug for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transition")
            .field("name", &self.name)
            .field("grounding", &self.grounding)
            .field("forced", &self.forced)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct BaseCase {
    condition: StatePred,
    cost: StateFn,
}

impl BaseCase {
    pub fn new<P, C>(condition: P, cost: C) -> Self
    where
        P: Fn(&State) -> bool + Send + Sync + 'static,
        C: Fn(&State) -> f64 + Send + Sync + 'static,
    {
        BaseCase {
            condition: Arc::new(condition),
            cost: Arc::new(cost),
        }
    }
}

#[derive(Clone)]
pub struct StateConstraint {
    name: String,
    check: StatePred,
}

impl StateConstraint {
    pub fn new<P>(name: &str, check: P) -> Self
    where
        P: Fn(&State) -> bool + Send + Sync + 'static,
    {
        StateConstraint {
            name: name.to_owned(),
            check: Arc::new(check),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Whether smaller or larger values of a resource variable are preferred.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preference {
    Less,
    Greater,
}

/// Resource variables for dominance detection. Two states with equal values
/// on every other variable are compared on the resources and on `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct DominanceSpec {
    pub resources: Vec<(usize, Preference)>,
}

/// Reasons a transition sequence fails to be a solution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvalidReason {
    UnknownTransition,
    NotApplicable { transition: String, precondition: String },
    ConstraintViolated { constraint: String },
    NotBaseState,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::UnknownTransition => write!(f, "unknown transition"),
            InvalidReason::NotApplicable {
                transition,
                precondition,
            } if precondition.is_empty() => write!(f, "{transition} is not applicable"),
            InvalidReason::NotApplicable {
                transition,
                precondition,
            } => write!(f, "{transition} is not applicable ({precondition})"),
            InvalidReason::ConstraintViolated { constraint } => {
                write!(f, "state constraint `{constraint}` violated")
            }
            InvalidReason::NotBaseState => write!(f, "not a base state"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed state: {0}")]
    MalformedState(String),
    #[error("{transition} is not applicable")]
    NotApplicable { transition: String },
    #[error("invalid solution at step {step}: {reason}")]
    InvalidSolution { step: usize, reason: InvalidReason },
    #[error("exact oracle exceeded its cap of {cap} memo entries")]
    OracleTooLarge { cap: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Result of [`Model::validate_solution`].
#[derive(Clone, Debug, PartialEq)]
pub enum Validation {
    Valid(f64),
    Invalid { step: usize, reason: InvalidReason },
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid(_))
    }

    pub fn cost(&self) -> Option<f64> {
        match self {
            Validation::Valid(c) => Some(*c),
            Validation::Invalid { .. } => None,
        }
    }
}

/// An immutable dynamic-programming model.
#[derive(Clone)]
pub struct Model {
    name: String,
    schema: Vec<VariableSchema>,
    target: State,
    transitions: Vec<Transition>,
    base_cases: Vec<BaseCase>,
    constraints: Vec<StateConstraint>,
    dual_bounds: Vec<StateFn>,
    direction: Direction,
    dominance: Option<DominanceSpec>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("schema", &self.schema)
            .field("transitions", &self.transitions)
            .field("direction", &self.direction)
            .finish_non_exhaustive()
    }
}

pub struct ModelBuilder {
    model: Model,
}

impl ModelBuilder {
    pub fn transition(mut self, transition: Transition) -> Self {
        self.model.transitions.push(transition);
        self
    }

    pub fn base_case(mut self, base: BaseCase) -> Self {
        self.model.base_cases.push(base);
        self
    }

    pub fn constraint(mut self, constraint: StateConstraint) -> Self {
        self.model.constraints.push(constraint);
        self
    }

    /// Declares a dual bound. Several bounds combine pointwise: the maximum
    /// for minimization, the minimum for maximization.
    pub fn dual_bound<F>(mut self, bound: F) -> Self
    where
        F: Fn(&State) -> f64 + Send + Sync + 'static,
    {
        self.model.dual_bounds.push(Arc::new(bound));
        self
    }

    pub fn dominance(mut self, spec: DominanceSpec) -> Self {
        self.model.dominance = Some(spec);
        self
    }

    pub fn build(self) -> Result<Model, ModelError> {
        let model = self.model;
        // A target violating a state constraint is accepted: the model is
        // then infeasible, which the oracle and the solvers report as such.
        model.check_state(&model.target)?;
        if let Some(spec) = &model.dominance {
            for &(var, _) in &spec.resources {
                if !matches!(
                    model.schema.get(var).map(|v| &v.kind),
                    Some(VariableKind::Numeric | VariableKind::Element { .. })
                ) {
                    return Err(ModelError::InvalidModel(format!(
                        "dominance resource {var} must be a numeric or element variable"
                    )));
                }
            }
        }
        Ok(model)
    }
}

impl Model {
    pub fn builder(name: &str, schema: Vec<VariableSchema>, target: State, direction: Direction) -> ModelBuilder {
        ModelBuilder {
            model: Model {
                name: name.to_owned(),
                schema,
                target,
                transitions: Vec::new(),
                base_cases: Vec::new(),
                constraints: Vec::new(),
                dual_bounds: Vec::new(),
                direction,
                dominance: None,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &[VariableSchema] {
        &self.schema
    }

    pub fn target(&self) -> &State {
        &self.target
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn dominance(&self) -> Option<&DominanceSpec> {
        self.dominance.as_ref()
    }

    pub fn has_dual_bound(&self) -> bool {
        !self.dual_bounds.is_empty()
    }

    /// Checks that `state` conforms to the schema.
    pub fn check_state(&self, state: &State) -> Result<(), ModelError> {
        if state.arity() != self.schema.len() {
            return Err(ModelError::MalformedState(format!(
                "arity {} does not match schema arity {}",
                state.arity(),
                self.schema.len()
            )));
        }
        for (var, (value, schema)) in state.values.iter().zip(&self.schema).enumerate() {
            let ok = match (value, &schema.kind) {
                (Value::Element(e), VariableKind::Element { bound }) => e < bound,
                (Value::Set(s), VariableKind::Set { universe }) => {
                    s.ones().all(|m| m < *universe)
                }
                (Value::Numeric(x), VariableKind::Numeric) => !x.is_nan(),
                _ => false,
            };
            if !ok {
                return Err(ModelError::MalformedState(format!(
                    "variable {var} (`{}`) has value {value:?} outside {:?}",
                    schema.name, schema.kind
                )));
            }
        }
        Ok(())
    }

    pub fn transition_label(&self, id: TransitionId) -> String {
        match self.transitions.get(id.family) {
            Some(t) => match (t.grounding, id.param) {
                (Grounding::Single, _) | (_, None) => t.name.clone(),
                (_, Some(p)) => format!("{}({p})", t.name),
            },
            None => format!("<unknown {}>", id.family),
        }
    }

    /// Parses a label such as `visit(2)` or `take` back into an id.
    pub fn transition_by_label(&self, label: &str) -> Option<TransitionId> {
        let label = label.trim();
        let (name, param) = match label.find('(') {
            Some(open) if label.ends_with(')') => {
                let p = label[open + 1..label.len() - 1].trim().parse().ok()?;
                (&label[..open], Some(p))
            }
            Some(_) => return None,
            None => (label, None),
        };
        let family = self.transitions.iter().position(|t| t.name == name)?;
        match (self.transitions[family].grounding, param) {
            (Grounding::Single, None) => Some(TransitionId { family, param: None }),
            (Grounding::Single, Some(_)) | (_, None) => None,
            (_, Some(p)) => Some(TransitionId {
                family,
                param: Some(p),
            }),
        }
    }

    fn grounded<'a>(&self, family: usize, state: &'a State) -> Box<dyn Iterator<Item = TransitionId> + 'a> {
        match self.transitions[family].grounding {
            Grounding::Single => Box::new(std::iter::once(TransitionId { family, param: None })),
            Grounding::SetMembers(var) => Box::new(state.set(var).ones().map(move |p| TransitionId {
                family,
                param: Some(p),
            })),
            Grounding::Range(n) => Box::new((0..n).map(move |p| TransitionId {
                family,
                param: Some(p),
            })),
        }
    }

    fn holds(&self, state: &State, id: TransitionId) -> bool {
        match self.transitions.get(id.family) {
            Some(t) => {
                let param_ok = match (t.grounding, id.param) {
                    (Grounding::Single, None) => true,
                    (Grounding::SetMembers(var), Some(p)) => state.set(var).contains(p),
                    (Grounding::Range(n), Some(p)) => p < n,
                    _ => false,
                };
                param_ok && (t.precondition)(state, id.param.unwrap_or(0))
            }
            None => false,
        }
    }

    /// Applicable transitions without schema validation; used on hot paths.
    pub fn applicable_unchecked(&self, state: &State) -> Vec<TransitionId> {
        for (family, t) in self.transitions.iter().enumerate() {
            if t.forced {
                if let Some(id) = self.grounded(family, state).find(|&id| self.holds(state, id)) {
                    return vec![id];
                }
            }
        }
        let mut out = Vec::new();
        for (family, t) in self.transitions.iter().enumerate() {
            if !t.forced {
                out.extend(self.grounded(family, state).filter(|&id| self.holds(state, id)));
            }
        }
        out
    }

    /// Transitions applicable in `state`. If a forced transition applies, only
    /// the first such one is returned.
    pub fn applicable_transitions(&self, state: &State) -> Result<Vec<TransitionId>, ModelError> {
        self.check_state(state)?;
        Ok(self.applicable_unchecked(state))
    }

    pub fn is_applicable(&self, state: &State, id: TransitionId) -> bool {
        self.applicable_unchecked(state).contains(&id)
    }

    /// Successor without applicability checks.
    pub fn successor_unchecked(&self, state: &State, id: TransitionId) -> State {
        (self.transitions[id.family].effect)(state, id.param.unwrap_or(0))
    }

    /// Transition cost without applicability checks.
    pub fn cost_unchecked(&self, state: &State, id: TransitionId) -> f64 {
        (self.transitions[id.family].cost)(state, id.param.unwrap_or(0))
    }

    pub fn apply_transition(&self, state: &State, id: TransitionId) -> Result<State, ModelError> {
        self.ensure_applicable(state, id)?;
        Ok(self.successor_unchecked(state, id))
    }

    pub fn transition_cost(&self, state: &State, id: TransitionId) -> Result<f64, ModelError> {
        self.ensure_applicable(state, id)?;
        Ok(self.cost_unchecked(state, id))
    }

    fn ensure_applicable(&self, state: &State, id: TransitionId) -> Result<(), ModelError> {
        self.check_state(state)?;
        if self.is_applicable(state, id) {
            Ok(())
        } else {
            Err(ModelError::NotApplicable {
                transition: self.transition_label(id),
            })
        }
    }

    /// Best base cost over the base cases satisfied by `state`, or `None` if
    /// the state is not a base state.
    pub fn base_cost(&self, state: &State) -> Option<f64> {
        self.base_cases
            .iter()
            .filter(|b| (b.condition)(state))
            .map(|b| (b.cost)(state))
            .reduce(|a, b| self.direction.best(a, b))
    }

    pub fn is_base(&self, state: &State) -> bool {
        self.base_cases.iter().any(|b| (b.condition)(state))
    }

    pub fn violated_constraint(&self, state: &State) -> Option<&StateConstraint> {
        self.constraints.iter().find(|c| !(c.check)(state))
    }

    pub fn satisfies_constraints(&self, state: &State) -> bool {
        self.violated_constraint(state).is_none()
    }

    /// Combined dual bound, or `None` if the model declares none.
    pub fn dual_bound(&self, state: &State) -> Option<f64> {
        self.dual_bounds
            .iter()
            .map(|b| b(state))
            .reduce(|a, b| match self.direction {
                Direction::Minimize => a.max(b),
                Direction::Maximize => a.min(b),
            })
    }

    pub fn validate_solution(&self, sequence: &[TransitionId]) -> Validation {
        let mut state = self.target.clone();
        if let Some(c) = self.violated_constraint(&state) {
            return Validation::Invalid {
                step: 0,
                reason: InvalidReason::ConstraintViolated {
                    constraint: c.name.clone(),
                },
            };
        }
        let mut total = 0.0;
        for (k, &id) in sequence.iter().enumerate() {
            let step = k + 1;
            let Some(t) = self.transitions.get(id.family) else {
                return Validation::Invalid {
                    step,
                    reason: InvalidReason::UnknownTransition,
                };
            };
            if !self.is_applicable(&state, id) {
                return Validation::Invalid {
                    step,
                    reason: InvalidReason::NotApplicable {
                        transition: self.transition_label(id),
                        precondition: t.precondition_label.clone(),
                    },
                };
            }
            total = saturating_add(total, self.cost_unchecked(&state, id));
            state = self.successor_unchecked(&state, id);
            if let Some(c) = self.violated_constraint(&state) {
                return Validation::Invalid {
                    step,
                    reason: InvalidReason::ConstraintViolated {
                        constraint: c.name.clone(),
                    },
                };
            }
        }
        match self.base_cost(&state) {
            Some(base) => Validation::Valid(saturating_add(total, base)),
            None => Validation::Invalid {
                step: sequence.len() + 1,
                reason: InvalidReason::NotBaseState,
            },
        }
    }

    /// Cost of a solution: transition costs along the path plus the base cost
    /// of the final state.
    pub fn solution_cost(&self, sequence: &[TransitionId]) -> Result<f64, ModelError> {
        match self.validate_solution(sequence) {
            Validation::Valid(c) => Ok(c),
            Validation::Invalid { step, reason } => Err(ModelError::InvalidSolution { step, reason }),
        }
    }

    /// Optimal value of `state` by memoized recursion over the reachable
    /// state space. Returns the direction's infinity sentinel when no base
    /// state is reachable. Fails once the memo would exceed `cap` entries.
    pub fn exact_value(&self, state: &State, cap: usize) -> Result<f64, ModelError> {
        self.check_state(state)?;
        let mut oracle = ExactOracle::new(self, cap);
        oracle.value(state)
    }
}

/// Memoized Bellman recursion. Reusable across calls on the same model so
/// that tests can enumerate every state it visited.
pub struct ExactOracle<'a> {
    model: &'a Model,
    cap: usize,
    memo: HashMap<State, f64>,
}

impl<'a> ExactOracle<'a> {
    pub fn new(model: &'a Model, cap: usize) -> Self {
        ExactOracle {
            model,
            cap,
            memo: HashMap::new(),
        }
    }

    pub fn value(&mut self, state: &State) -> Result<f64, ModelError> {
        if let Some(&v) = self.memo.get(state) {
            return Ok(v);
        }
        let model = self.model;
        let dir = model.direction;
        let v = if !model.satisfies_constraints(state) {
            dir.infeasible()
        } else if let Some(base) = model.base_cost(state) {
            base
        } else {
            let mut best = dir.infeasible();
            for id in model.applicable_unchecked(state) {
                let next = model.successor_unchecked(state, id);
                let cost = model.cost_unchecked(state, id);
                let sub = self.value(&next)?;
                if !dir.is_infeasible(sub) {
                    best = dir.best(best, cost + sub);
                }
            }
            best
        };
        if self.memo.len() >= self.cap {
            return Err(ModelError::OracleTooLarge { cap: self.cap });
        }
        self.memo.insert(state.clone(), v);
        Ok(v)
    }

    /// Every state evaluated so far with its optimal value.
    pub fn memo(&self) -> &HashMap<State, f64> {
        &self.memo
    }
}

/// Default memo cap for [`Model::exact_value`] in tests and tools.
pub const DEFAULT_ORACLE_CAP: usize = 5_000_000;

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-variable toy: counter `k` in 0..4, one forced "jump" when k == 1.
    fn toy(with_forced: bool) -> Model {
        let schema = vec![VariableSchema::element("k", 4)];
        let target = State::new(vec![Value::Element(0)]);
        let step = |s: &State, _p: usize| {
            let mut n = s.clone();
            n.set_element(0, s.element(0) + 1);
            n
        };
        let mut b = Model::builder("toy", schema, target, Direction::Minimize)
            .transition(Transition::new("step", Grounding::Single, |s, _| s.element(0) < 3, step, |_, _| 1.0))
            .transition(Transition::new(
                "skip",
                Grounding::Single,
                |s, _| s.element(0) < 2,
                |s, _| {
                    let mut n = s.clone();
                    n.set_element(0, s.element(0) + 2);
                    n
                },
                |_, _| 3.0,
            ))
            .base_case(BaseCase::new(|s| s.element(0) == 3, |_| 0.0));
        if with_forced {
            b = b.transition(
                Transition::new(
                    "jump",
                    Grounding::Single,
                    |s, _| s.element(0) == 1,
                    |s, _| {
                        let mut n = s.clone();
                        n.set_element(0, 3);
                        n
                    },
                    |_, _| 10.0,
                )
                .forced(),
            );
        }
        b.build().unwrap()
    }

    #[test]
    fn forced_transition_shadows_the_rest() {
        let m = toy(true);
        let s1 = State::new(vec![Value::Element(1)]);
        let app = m.applicable_transitions(&s1).unwrap();
        assert_eq!(app.len(), 1);
        assert_eq!(m.transition_label(app[0]), "jump");
        let s0 = m.target().clone();
        assert_eq!(m.applicable_transitions(&s0).unwrap().len(), 2);
    }

    #[test]
    fn forced_changes_the_optimum() {
        assert_eq!(m_value(&toy(false)), 3.0);
        // 0 -> 1 costs 1, then the forced jump costs 10; skipping costs 3 + 1.
        assert_eq!(m_value(&toy(true)), 4.0);
    }

    fn m_value(m: &Model) -> f64 {
        m.exact_value(m.target(), 100).unwrap()
    }

    #[test]
    fn malformed_state_is_rejected() {
        let m = toy(false);
        let bad = State::new(vec![Value::Element(7)]);
        assert!(matches!(m.applicable_transitions(&bad), Err(ModelError::MalformedState(_))));
        let wrong_kind = State::new(vec![Value::Numeric(1.0)]);
        assert!(matches!(m.check_state(&wrong_kind), Err(ModelError::MalformedState(_))));
        let wrong_arity = State::new(vec![]);
        assert!(m.check_state(&wrong_arity).is_err());
    }

    #[test]
    fn inapplicable_transition_is_an_error() {
        let m = toy(false);
        let s3 = State::new(vec![Value::Element(3)]);
        let step = m.transition_by_label("step").unwrap();
        assert!(matches!(m.apply_transition(&s3, step), Err(ModelError::NotApplicable { .. })));
        assert!(m.transition_cost(&s3, step).is_err());
    }

    #[test]
    fn oracle_cap_is_enforced() {
        let m = toy(false);
        assert_eq!(m.exact_value(m.target(), 1), Err(ModelError::OracleTooLarge { cap: 1 }));
    }

    #[test]
    fn labels_round_trip() {
        let m = toy(true);
        for (i, t) in m.transitions().iter().enumerate() {
            let id = TransitionId { family: i, param: None };
            assert_eq!(m.transition_by_label(t.name()), Some(id));
        }
        assert_eq!(m.transition_by_label("nope"), None);
        assert_eq!(m.transition_by_label("step(1)"), None);
    }

    #[test]
    fn saturating_arithmetic() {
        assert_eq!(saturating_add(3.0, f64::INFINITY), f64::INFINITY);
        assert_eq!(saturating_add(f64::NEG_INFINITY, 2.0), f64::NEG_INFINITY);
        assert_eq!(saturating_add(1.5, 2.0), 3.5);
    }

    #[test]
    fn numeric_values_hash_bitwise() {
        use std::collections::HashSet;
        let a = State::new(vec![Value::Numeric(0.0)]);
        let b = State::new(vec![Value::Numeric(-0.0)]);
        let set: HashSet<_> = [a.clone(), b, a].into_iter().collect();
        assert_eq!(set.len(), 2);
    }
}
