//! Duplicate and dominance detection over generated states.

use std::collections::HashMap;

use crate::model::{Direction, Model, Preference, State, Value};

/// Outcome of registering a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Registration {
    Inserted,
    /// An existing entry is at least as good.
    Dominated,
    /// Inserted, and these previously registered nodes are now dominated.
    Replaces(Vec<usize>),
}

#[derive(Clone, Debug)]
struct Entry {
    resources: Vec<f64>,
    g: f64,
    node: usize,
}

/// Pareto sets of `(resources, g)` per reduced state, the reduced state
/// being the state with its resource variables blanked. Without resource
/// variables this is plain duplicate detection keeping the better `g`.
#[derive(Clone, Debug)]
pub struct DominanceRegistry {
    resources: Vec<(usize, Preference)>,
    direction: Direction,
    map: HashMap<State, Vec<Entry>>,
}

impl DominanceRegistry {
    /// Uses the model's resource variables when `use_resources` is set.
    pub fn new(model: &Model, use_resources: bool) -> Self {
        let resources = match (use_resources, model.dominance()) {
            (true, Some(spec)) => spec.resources.clone(),
            _ => Vec::new(),
        };
        DominanceRegistry {
            resources,
            direction: model.direction(),
            map: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn split(&self, state: &State) -> (State, Vec<f64>) {
        if self.resources.is_empty() {
            return (state.clone(), Vec::new());
        }
        let mut values = state.values().to_vec();
        let mut res = Vec::with_capacity(self.resources.len());
        for &(var, _) in &self.resources {
            res.push(match values[var] {
                Value::Element(e) => e as f64,
                Value::Numeric(x) => x,
                Value::Set(ref s) => s.count_ones(..) as f64,
            });
            values[var] = Value::Numeric(0.0);
        }
        (State::new(values), res)
    }

    /// `true` if `(ra, ga)` is at least as good as `(rb, gb)` everywhere.
    fn dominates(&self, ra: &[f64], ga: f64, rb: &[f64], gb: f64) -> bool {
        let res_ok = self.resources.iter().zip(ra.iter().zip(rb)).all(|((_, pref), (a, b))| match pref {
            Preference::Less => a <= b,
            Preference::Greater => a >= b,
        });
        res_ok && !self.direction.is_better(gb, ga)
    }

    pub fn register(&mut self, state: &State, g: f64, node: usize) -> Registration {
        let (key, resources) = self.split(state);
        let mut entries = self.map.remove(&key).unwrap_or_default();
        if entries.iter().any(|e| self.dominates(&e.resources, e.g, &resources, g)) {
            self.map.insert(key, entries);
            return Registration::Dominated;
        }
        let mut replaced = Vec::new();
        entries.retain(|e| {
            let gone = self.dominates(&resources, g, &e.resources, e.g);
            if gone {
                replaced.push(e.node);
            }
            !gone
        });
        entries.push(Entry { resources, g, node });
        self.map.insert(key, entries);
        if replaced.is_empty() {
            Registration::Inserted
        } else {
            Registration::Replaces(replaced)
        }
    }

    /// Checks the Pareto invariant: no stored entry dominates another.
    pub fn is_pareto(&self) -> bool {
        self.map.values().all(|entries| {
            entries.iter().enumerate().all(|(i, a)| {
                entries
                    .iter()
                    .enumerate()
                    .all(|(j, b)| i == j || !self.dominates(&a.resources, a.g, &b.resources, b.g))
            })
        })
    }
}
