//! TSP and TSP with time windows.

use std::sync::Arc;

use fixedbitset::FixedBitSet;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DomainError;
use crate::model::{
    bitset, BaseCase, Direction, DominanceSpec, Grounding, Model, Preference, State, StateConstraint, Transition,
    Value, VariableSchema,
};

pub const UNVISITED: usize = 0;
pub const CURRENT: usize = 1;
pub const TIME: usize = 2;

/// Customers `0..n` with depot 0 and a travel-time matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    /// Optional coordinates in `[0, 100]^2`, one pair per customer.
    #[serde(default)]
    pub coords: Vec<[f64; 2]>,
    pub travel: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsptwInstance {
    #[serde(flatten)]
    pub tsp: TspInstance,
    pub ready: Vec<f64>,
    pub due: Vec<f64>,
}

impl TspInstance {
    pub fn n(&self) -> usize {
        self.travel.len()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let n = self.n();
        if n < 2 {
            return Err(DomainError::InvalidInstance("need at least a depot and one customer".into()));
        }
        if !self.coords.is_empty() && self.coords.len() != n {
            return Err(DomainError::InvalidInstance(format!(
                "{} coordinates for {n} customers",
                self.coords.len()
            )));
        }
        for (i, row) in self.travel.iter().enumerate() {
            if row.len() != n {
                return Err(DomainError::InvalidInstance(format!("travel row {i} has length {}", row.len())));
            }
            if row[i] != 0.0 {
                return Err(DomainError::InvalidInstance(format!("travel[{i}][{i}] must be 0")));
            }
            if row.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(DomainError::InvalidInstance(format!(
                    "travel row {i} has a negative or non-finite entry"
                )));
            }
        }
        Ok(())
    }

    /// Minimum travel time into each customer from any other customer.
    pub fn min_in(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|j| (0..n).filter(|&k| k != j).map(|k| self.travel[k][j]).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Minimum travel time out of each customer to any other customer.
    pub fn min_out(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|j| (0..n).filter(|&k| k != j).map(|k| self.travel[j][k]).fold(f64::INFINITY, f64::min))
            .collect()
    }

    pub fn max_travel(&self) -> f64 {
        self.travel.iter().flatten().copied().fold(0.0, f64::max)
    }
}

impl TsptwInstance {
    pub fn n(&self) -> usize {
        self.tsp.n()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        self.tsp.validate()?;
        let n = self.n();
        if self.ready.len() != n || self.due.len() != n {
            return Err(DomainError::InvalidInstance("one time window per customer required".into()));
        }
        if self.ready[0] != 0.0 {
            return Err(DomainError::InvalidInstance("depot ready time must be 0".into()));
        }
        for j in 0..n {
            if !(self.ready[j] <= self.due[j]) {
                return Err(DomainError::InvalidInstance(format!("window of customer {j} is empty")));
            }
        }
        Ok(())
    }

    /// All-pairs shortest travel times (Floyd-Warshall).
    pub fn shortest_paths(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut d = self.tsp.travel.clone();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    pub fn horizon(&self) -> f64 {
        self.due.iter().copied().fold(1.0, f64::max)
    }
}

/// `(U, i)` bound: max of the in-degree and out-degree relaxations.
fn routing_bound(unvisited: &FixedBitSet, current: usize, min_in: &[f64], min_out: &[f64]) -> f64 {
    let in_sum: f64 = min_in[0] + unvisited.ones().map(|j| min_in[j]).sum::<f64>();
    let mut out_sum: f64 = unvisited.ones().map(|j| min_out[j]).sum();
    if !unvisited.contains(current) {
        out_sum += min_out[current];
    }
    in_sum.max(out_sum)
}

pub fn tsp_dual_bound(instance: &TspInstance, state: &State) -> f64 {
    routing_bound(state.set(UNVISITED), state.element(CURRENT), &instance.min_in(), &instance.min_out())
}

pub fn tsptw_dual_bound(instance: &TsptwInstance, state: &State) -> f64 {
    tsp_dual_bound(&instance.tsp, state)
}

fn routing_target(n: usize, with_time: bool) -> State {
    let mut values = vec![Value::Set(bitset(n, 1..n)), Value::Element(0)];
    if with_time {
        values.push(Value::Numeric(0.0));
    }
    State::new(values)
}

pub fn build_tsp_model(instance: &TspInstance) -> Result<Model, DomainError> {
    instance.validate()?;
    let n = instance.n();
    let c = Arc::new(instance.travel.clone());
    let schema = vec![VariableSchema::set("U", n), VariableSchema::element("i", n)];
    let (c_cost, c_base) = (c.clone(), c);
    let (min_in, min_out) = (instance.min_in(), instance.min_out());
    let model = Model::builder("tsp", schema, routing_target(n, false), Direction::Minimize)
        .transition(
            Transition::new(
                "visit",
                Grounding::SetMembers(UNVISITED),
                |_, _| true,
                |s, j| {
                    let mut next = s.clone();
                    next.set_mut(UNVISITED).set(j, false);
                    next.set_element(CURRENT, j);
                    next
                },
                move |s, j| c_cost[s.element(CURRENT)][j],
            )
            .with_precondition_label("j in U"),
        )
        .base_case(BaseCase::new(
            |s| s.set(UNVISITED).is_clear(),
            move |s| c_base[s.element(CURRENT)][0],
        ))
        .dual_bound(move |s| min_in[0] + s.set(UNVISITED).ones().map(|j| min_in[j]).sum::<f64>())
        .dual_bound(move |s| {
            let u = s.set(UNVISITED);
            let i = s.element(CURRENT);
            let extra = if u.contains(i) { 0.0 } else { min_out[i] };
            extra + u.ones().map(|j| min_out[j]).sum::<f64>()
        })
        .build()?;
    Ok(model)
}

pub fn build_tsptw_model(instance: &TsptwInstance) -> Result<Model, DomainError> {
    instance.validate()?;
    let n = instance.n();
    let c = Arc::new(instance.tsp.travel.clone());
    let ready = Arc::new(instance.ready.clone());
    let due = Arc::new(instance.due.clone());
    let shortest = instance.shortest_paths();
    let schema = vec![
        VariableSchema::set("U", n),
        VariableSchema::element("i", n),
        VariableSchema::numeric("t"),
    ];
    let (c_pre, c_eff, c_cost, c_base) = (c.clone(), c.clone(), c.clone(), c);
    let due_pre = due.clone();
    let (min_in, min_out) = (instance.tsp.min_in(), instance.tsp.min_out());
    let model = Model::builder("tsptw", schema, routing_target(n, true), Direction::Minimize)
        .transition(
            Transition::new(
                "visit",
                Grounding::SetMembers(UNVISITED),
                move |s, j| s.numeric(TIME) + c_pre[s.element(CURRENT)][j] <= due_pre[j],
                move |s, j| {
                    let i = s.element(CURRENT);
                    let mut next = s.clone();
                    next.set_mut(UNVISITED).set(j, false);
                    next.set_element(CURRENT, j);
                    next.set_numeric(TIME, (s.numeric(TIME) + c_eff[i][j]).max(ready[j]));
                    next
                },
                move |s, j| c_cost[s.element(CURRENT)][j],
            )
            .with_precondition_label("j in U and t + c_ij <= b_j"),
        )
        .base_case(BaseCase::new(
            |s| s.set(UNVISITED).is_clear(),
            move |s| c_base[s.element(CURRENT)][0],
        ))
        .constraint(StateConstraint::new("deadline", move |s| {
            let i = s.element(CURRENT);
            let t = s.numeric(TIME);
            s.set(UNVISITED).ones().all(|j| t + shortest[i][j] <= due[j])
        }))
        .dominance(DominanceSpec {
            resources: vec![(TIME, Preference::Less)],
        })
        .dual_bound(move |s| routing_bound(s.set(UNVISITED), s.element(CURRENT), &min_in, &min_out))
        .build()?;
    Ok(model)
}

/// Nearest unvisited customer; ties go to the smaller index.
pub fn tsp_greedy(instance: &TspInstance, state: &State) -> Option<usize> {
    let i = state.element(CURRENT);
    argmin(state.set(UNVISITED).ones(), |j| instance.travel[i][j])
}

/// Unvisited customer with the earliest service start, ignoring deadlines.
pub fn tsptw_greedy(instance: &TsptwInstance, state: &State) -> Option<usize> {
    let i = state.element(CURRENT);
    let t = state.numeric(TIME);
    argmin(state.set(UNVISITED).ones(), |j| {
        (t + instance.tsp.travel[i][j]).max(instance.ready[j])
    })
}

fn argmin(items: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in items {
        let k = key(j);
        if best.is_none_or(|(_, bk)| k < bk) {
            best = Some((j, k));
        }
    }
    best.map(|(j, _)| j)
}

/// Per-customer rows: x, y, in U, is current, travel from current, travel
/// back to the depot.
pub fn tsp_features(instance: &TspInstance, state: &State) -> Vec<Vec<f64>> {
    let n = instance.n();
    let u = state.set(UNVISITED);
    let i = state.element(CURRENT);
    let scale = instance.max_travel().max(1.0);
    (0..n)
        .map(|j| {
            let [x, y] = instance.coords.get(j).copied().unwrap_or([0.0, 0.0]);
            vec![
                x / 100.0,
                y / 100.0,
                f64::from(u.contains(j) as u8),
                f64::from((j == i) as u8),
                instance.travel[i][j] / scale,
                instance.travel[j][0] / scale,
            ]
        })
        .collect()
}

/// TSP rows plus scaled window bounds and the slack before each deadline.
pub fn tsptw_features(instance: &TsptwInstance, state: &State) -> Vec<Vec<f64>> {
    let horizon = instance.horizon();
    let t = state.numeric(TIME);
    let i = state.element(CURRENT);
    let mut rows = tsp_features(&instance.tsp, state);
    for (j, row) in rows.iter_mut().enumerate() {
        row.push(instance.ready[j] / horizon);
        row.push(instance.due[j] / horizon);
        row.push((instance.due[j] - t - instance.tsp.travel[i][j]) / horizon);
    }
    rows
}

/// Uniform coordinates on `[0, 100]^2` with floored Euclidean travel times.
pub fn random_coords<R: Rng>(n: usize, rng: &mut R) -> (Vec<[f64; 2]>, Vec<Vec<f64>>) {
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.gen_range(0.0..=100.0), rng.gen_range(0.0..=100.0)])
        .collect();
    let travel = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let dx = coords[i][0] - coords[j][0];
                    let dy = coords[i][1] - coords[j][1];
                    (dx * dx + dy * dy).sqrt().floor()
                })
                .collect()
        })
        .collect();
    (coords, travel)
}

/// Window generation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    /// Maximal window length.
    pub max_window: f64,
    /// Maximal gap between the reference arrival time and the window opening.
    pub max_gap: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            max_window: 100.0,
            max_gap: 1000.0,
        }
    }
}

/// Generated instance together with the tour used to place its windows.
#[derive(Clone, Debug)]
pub struct GeneratedTsptw {
    pub instance: TsptwInstance,
    pub reference_tour: Vec<usize>,
}

/// Windows are placed around the arrival times of a random reference tour,
/// which therefore stays feasible.
pub fn random_tsptw<R: Rng>(n: usize, params: WindowParams, rng: &mut R) -> GeneratedTsptw {
    let (coords, travel) = random_coords(n, rng);
    let mut tour: Vec<usize> = (1..n).collect();
    tour.shuffle(rng);
    let mut ready = vec![0.0; n];
    let mut due = vec![0.0; n];
    let (mut t, mut prev) = (0.0, 0);
    for &j in &tour {
        t += travel[prev][j];
        let gap = rng.gen_range(0..=params.max_gap as i64) as f64;
        let len = rng.gen_range(1..=params.max_window.max(1.0) as i64) as f64;
        ready[j] = (t - gap).max(0.0);
        due[j] = t + len;
        prev = j;
    }
    due[0] = t + travel[prev][0] + params.max_window;
    GeneratedTsptw {
        instance: TsptwInstance {
            tsp: TspInstance { coords, travel },
            ready,
            due,
        },
        reference_tour: tour,
    }
}

/// The TSP fixture with an asymmetric 3x3 matrix.
pub fn fix_tsp3() -> TspInstance {
    TspInstance {
        coords: Vec::new(),
        travel: vec![vec![0.0, 1.0, 5.0], vec![5.0, 0.0, 2.0], vec![1.0, 5.0, 0.0]],
    }
}

/// [`fix_tsp3`] with a tight deadline on customer 1.
pub fn fix_tsptw3() -> TsptwInstance {
    TsptwInstance {
        tsp: fix_tsp3(),
        ready: vec![0.0; 3],
        due: vec![100.0, 1.0, 100.0],
    }
}
