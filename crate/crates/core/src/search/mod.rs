//! Anytime state-space search over a [`Model`]: complete anytime beam search
//! (CABS), anytime column progressive search (ACPS) and anytime pack
//! progressive search (APPS).
//!
//! Successors violating a state constraint are discarded, successors in a
//! base state are leaves that may improve the incumbent, and the remaining
//! ones are bound-pruned against the incumbent, deduplicated, and ordered by
//! the evaluator's `f`. Ties prefer deeper nodes, then smaller `h`, then the
//! earlier generated node.

mod registry;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use registry::{DominanceRegistry, Registration};

use crate::guidance::{Child, Evaluator, GuidanceError, ParentView};
use crate::model::{saturating_add, Direction, Model, State, TransitionId};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cabs,
    Acps,
    Apps,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Cabs, Algorithm::Acps, Algorithm::Apps];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cabs => "cabs",
            Algorithm::Acps => "acps",
            Algorithm::Apps => "apps",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown search algorithm `{s}` (expected cabs, acps or apps)"))
    }
}

/// Search budgets; `None` means unlimited.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Limits {
    pub max_expansions: Option<u64>,
    pub time_limit: Option<Duration>,
}

impl Limits {
    pub fn expansions(max: u64) -> Self {
        Limits {
            max_expansions: Some(max),
            time_limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    /// Prune nodes whose dual bound cannot beat the incumbent.
    pub prune: bool,
    /// Use the model's resource dominance on top of duplicate detection.
    pub dominance: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            prune: true,
            dominance: true,
        }
    }
}

/// Best solution found so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Incumbent {
    pub cost: f64,
    pub sequence: Vec<TransitionId>,
    pub expansions_at_discovery: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub best: Option<Incumbent>,
    /// The best solution is optimal, or no solution exists when `best` is
    /// absent.
    pub proved_optimal: bool,
    pub expansions: u64,
    pub generated: u64,
    /// `(expansions, cost)` at every improvement.
    pub anytime_trace: Vec<(u64, f64)>,
}

impl SolveResult {
    pub fn cost(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.cost)
    }
}

/// Whether a node with path cost `g` and dual bound `eta` can be discarded.
pub fn prune_test(g: f64, eta: f64, incumbent: Option<f64>, direction: Direction) -> bool {
    if direction.is_infeasible(eta) {
        return true;
    }
    let Some(best) = incumbent else {
        return false;
    };
    let bound = saturating_add(g, eta);
    !direction.is_better(bound, best)
}

#[derive(Clone, Debug)]
struct Node {
    state: State,
    g: f64,
    f: f64,
    h: f64,
    eta: Option<f64>,
    pi_acc: f64,
    depth: usize,
    parent: Option<(usize, TransitionId)>,
    seq: u64,
    stale: bool,
}

/// Heap entry ordered so that the best node is the greatest.
#[derive(Clone, Copy, Debug)]
struct OpenEntry {
    f: f64,
    depth: usize,
    h: f64,
    seq: u64,
    idx: usize,
    direction: Direction,
}

impl OpenEntry {
    fn of(nodes: &[Node], idx: usize, direction: Direction) -> Self {
        let n = &nodes[idx];
        OpenEntry {
            f: n.f,
            depth: n.depth,
            h: n.h,
            seq: n.seq,
            idx,
            direction,
        }
    }
}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        let by_f = match self.direction {
            Direction::Minimize => other.f.total_cmp(&self.f),
            Direction::Maximize => self.f.total_cmp(&other.f),
        };
        by_f.then(self.depth.cmp(&other.depth))
            .then(other.h.total_cmp(&self.h))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

/// Sorts node indices best first.
fn sort_best_first(nodes: &[Node], idxs: &mut [usize], direction: Direction) {
    idxs.sort_by(|&a, &b| OpenEntry::of(nodes, b, direction).cmp(&OpenEntry::of(nodes, a, direction)));
}

/// Shared state of one solve: node arena, incumbent, counters and budgets.
struct Search<'a> {
    model: &'a Model,
    evaluator: &'a dyn Evaluator,
    limits: Limits,
    options: SearchOptions,
    start: Instant,
    nodes: Vec<Node>,
    seq: u64,
    expansions: u64,
    generated: u64,
    incumbent: Option<Incumbent>,
    trace: Vec<(u64, f64)>,
}

/// How a solve starts.
enum Root {
    Expand(usize),
    /// The answer is already known.
    Done,
}

impl<'a> Search<'a> {
    fn new(model: &'a Model, evaluator: &'a dyn Evaluator, limits: Limits, options: SearchOptions) -> Self {
        Search {
            model,
            evaluator,
            limits,
            options,
            start: Instant::now(),
            nodes: Vec::new(),
            seq: 0,
            expansions: 0,
            generated: 0,
            incumbent: None,
            trace: Vec::new(),
        }
    }

    fn direction(&self) -> Direction {
        self.model.direction()
    }

    fn out_of_budget(&self) -> bool {
        self.limits.max_expansions.is_some_and(|m| self.expansions >= m)
            || self.limits.time_limit.is_some_and(|t| self.start.elapsed() >= t)
    }

    fn incumbent_cost(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|i| i.cost)
    }

    fn prunable(&self, g: f64, eta: Option<f64>) -> bool {
        match eta {
            Some(eta) if self.options.prune => prune_test(g, eta, self.incumbent_cost(), self.direction()),
            _ => false,
        }
    }

    fn node_prunable(&self, idx: usize) -> bool {
        let n = &self.nodes[idx];
        n.stale || self.prunable(n.g, n.eta)
    }

    fn sequence_to(&self, mut idx: usize) -> Vec<TransitionId> {
        let mut seq = Vec::with_capacity(self.nodes[idx].depth + 1);
        while let Some((parent, id)) = self.nodes[idx].parent {
            seq.push(id);
            idx = parent;
        }
        seq.reverse();
        seq
    }

    fn offer(&mut self, cost: f64, sequence: impl FnOnce(&Self) -> Vec<TransitionId>) {
        if self.direction().is_infeasible(cost) {
            return;
        }
        if self.incumbent_cost().is_none_or(|best| self.direction().is_better(cost, best)) {
            let sequence = sequence(self);
            self.incumbent = Some(Incumbent {
                cost,
                sequence,
                expansions_at_discovery: self.expansions,
            });
            self.trace.push((self.expansions, cost));
        }
    }

    /// Places the target state in a fresh arena.
    fn root(&mut self) -> Result<Root, SearchError> {
        self.nodes.clear();
        let target = self.model.target().clone();
        if !self.model.satisfies_constraints(&target) {
            return Ok(Root::Done);
        }
        if let Some(base) = self.model.base_cost(&target) {
            self.offer(base, |_| Vec::new());
            return Ok(Root::Done);
        }
        let eta = self.model.dual_bound(&target);
        if self.prunable(0.0, eta) {
            return Ok(Root::Done);
        }
        self.seq += 1;
        self.nodes.push(Node {
            state: target,
            g: 0.0,
            f: 0.0,
            h: eta.unwrap_or(0.0),
            eta,
            pi_acc: 1.0,
            depth: 0,
            parent: None,
            seq: self.seq,
            stale: false,
        });
        Ok(Root::Expand(0))
    }

    /// Expands node `idx`, returning the indices of the successors that
    /// survived pruning and registration.
    fn expand(&mut self, idx: usize, registry: &mut DominanceRegistry) -> Result<Vec<usize>, SearchError> {
        self.expansions += 1;
        let model = self.model;
        let (g, depth, pi_acc) = {
            let n = &self.nodes[idx];
            (n.g, n.depth, n.pi_acc)
        };
        let mut children = Vec::new();
        for id in model.applicable_unchecked(&self.nodes[idx].state) {
            let parent_state = &self.nodes[idx].state;
            let state = model.successor_unchecked(parent_state, id);
            let child_g = saturating_add(g, model.cost_unchecked(parent_state, id));
            self.generated += 1;
            if !model.satisfies_constraints(&state) {
                continue;
            }
            if let Some(base) = model.base_cost(&state) {
                self.offer(saturating_add(child_g, base), |s| {
                    let mut seq = s.sequence_to(idx);
                    seq.push(id);
                    seq
                });
                continue;
            }
            let eta = model.dual_bound(&state);
            if self.prunable(child_g, eta) {
                continue;
            }
            children.push(Child::new(state, id, child_g, eta));
        }
        if children.is_empty() {
            return Ok(Vec::new());
        }
        let parent = ParentView {
            state: &self.nodes[idx].state,
            g,
            pi_acc,
        };
        self.evaluator.evaluate(model, parent, &mut children)?;

        let mut inserted = Vec::with_capacity(children.len());
        for c in children {
            let new_idx = self.nodes.len();
            match registry.register(&c.state, c.g, new_idx) {
                Registration::Dominated => continue,
                Registration::Inserted => {}
                Registration::Replaces(old) => {
                    for o in old {
                        self.nodes[o].stale = true;
                    }
                }
            }
            self.seq += 1;
            self.nodes.push(Node {
                state: c.state,
                g: c.g,
                f: c.f,
                h: c.h,
                eta: c.eta,
                pi_acc: c.pi_acc,
                depth: depth + 1,
                parent: Some((idx, c.transition)),
                seq: self.seq,
                stale: false,
            });
            inserted.push(new_idx);
        }
        Ok(inserted)
    }

    fn result(self, proved_optimal: bool) -> SolveResult {
        SolveResult {
            best: self.incumbent,
            proved_optimal,
            expansions: self.expansions,
            generated: self.generated,
            anytime_trace: self.trace,
        }
    }

    /// One beam-search pass. Returns `(complete, budget_exhausted)`.
    fn beam_pass(&mut self, width: usize) -> Result<(bool, bool), SearchError> {
        let Root::Expand(root) = self.root()? else {
            return Ok((true, false));
        };
        let direction = self.direction();
        let mut layer = vec![root];
        let mut complete = true;
        while !layer.is_empty() {
            let mut registry = DominanceRegistry::new(self.model, self.options.dominance);
            let mut next = Vec::new();
            for &idx in &layer {
                if self.node_prunable(idx) {
                    continue;
                }
                if self.out_of_budget() {
                    return Ok((false, true));
                }
                next.extend(self.expand(idx, &mut registry)?);
            }
            next.retain(|&i| !self.nodes[i].stale);
            sort_best_first(&self.nodes, &mut next, direction);
            if next.len() > width {
                next.truncate(width);
                complete = false;
            }
            layer = next;
        }
        Ok((complete, false))
    }
}

/// Outcome of a single beam-search pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutcome {
    pub incumbent: Option<Incumbent>,
    /// No node was discarded by the width cap, so the incumbent is optimal
    /// (or the model is infeasible).
    pub complete: bool,
    pub expansions: u64,
    pub generated: u64,
}

/// Beam search keeping the best `width` nodes per layer, starting from an
/// optional incumbent.
pub fn beam_search_once(
    model: &Model,
    evaluator: &dyn Evaluator,
    width: usize,
    incumbent: Option<Incumbent>,
    options: SearchOptions,
) -> Result<BeamOutcome, SearchError> {
    if width == 0 {
        return Err(SearchError::InvalidArgument("beam width must be at least 1".into()));
    }
    let mut search = Search::new(model, evaluator, Limits::default(), options);
    search.incumbent = incumbent;
    let (complete, _) = search.beam_pass(width)?;
    Ok(BeamOutcome {
        incumbent: search.incumbent,
        complete,
        expansions: search.expansions,
        generated: search.generated,
    })
}

/// Complete anytime beam search: beam passes with widths 1, 2, 4, ... until
/// a pass completes or the budget runs out.
pub fn solve_cabs(
    model: &Model,
    evaluator: &dyn Evaluator,
    limits: Limits,
    options: SearchOptions,
) -> Result<SolveResult, SearchError> {
    let mut search = Search::new(model, evaluator, limits, options);
    let mut width = 1usize;
    loop {
        let (complete, exhausted) = search.beam_pass(width)?;
        if complete {
            return Ok(search.result(true));
        }
        if exhausted || search.out_of_budget() {
            return Ok(search.result(false));
        }
        width = width.saturating_mul(2);
    }
}

/// Anytime column progressive search: one open list per depth, expanding up
/// to `b` nodes from each layer in turn.
pub fn solve_acps(
    model: &Model,
    evaluator: &dyn Evaluator,
    limits: Limits,
    options: SearchOptions,
) -> Result<SolveResult, SearchError> {
    let mut search = Search::new(model, evaluator, limits, options);
    let Root::Expand(root) = search.root()? else {
        return Ok(search.result(true));
    };
    let direction = search.direction();
    let mut registry = DominanceRegistry::new(model, options.dominance);
    registry.register(&search.nodes[root].state, 0.0, root);
    let mut layers: Vec<BinaryHeap<OpenEntry>> = vec![BinaryHeap::from([OpenEntry::of(&search.nodes, root, direction)])];
    let mut i = 0;
    let mut b = 1;
    loop {
        if layers.iter().all(BinaryHeap::is_empty) {
            return Ok(search.result(true));
        }
        if layers[i..].iter().all(BinaryHeap::is_empty) {
            i = 0;
            b += 1;
            continue;
        }
        let before = search.trace.len();
        let mut expanded = 0;
        while expanded < b {
            let Some(entry) = layers[i].pop() else { break };
            if search.node_prunable(entry.idx) {
                continue;
            }
            if search.out_of_budget() {
                return Ok(search.result(false));
            }
            let children = search.expand(entry.idx, &mut registry)?;
            expanded += 1;
            if !children.is_empty() && layers.len() <= i + 1 {
                layers.push(BinaryHeap::new());
            }
            for c in children {
                layers[i + 1].push(OpenEntry::of(&search.nodes, c, direction));
            }
        }
        if search.trace.len() > before {
            i = 0;
        } else {
            i += 1;
            if i >= layers.len() {
                i = 0;
                b += 1;
            }
        }
    }
}

/// Anytime pack progressive search: expand the whole best pack, keep the
/// best `b` successors as the next pack and suspend the rest; when the pack
/// runs dry, resume the best `b` suspended nodes and widen `b`.
pub fn solve_apps(
    model: &Model,
    evaluator: &dyn Evaluator,
    limits: Limits,
    options: SearchOptions,
) -> Result<SolveResult, SearchError> {
    let mut search = Search::new(model, evaluator, limits, options);
    let Root::Expand(root) = search.root()? else {
        return Ok(search.result(true));
    };
    let direction = search.direction();
    let mut registry = DominanceRegistry::new(model, options.dominance);
    registry.register(&search.nodes[root].state, 0.0, root);
    let mut best = vec![root];
    let mut suspended: BinaryHeap<OpenEntry> = BinaryHeap::new();
    let mut b = 1;
    loop {
        if best.is_empty() {
            while best.len() < b {
                let Some(entry) = suspended.pop() else { break };
                if !search.node_prunable(entry.idx) {
                    best.push(entry.idx);
                }
            }
            if best.is_empty() {
                return Ok(search.result(true));
            }
            b += 1;
        }
        let mut successors = Vec::new();
        for idx in std::mem::take(&mut best) {
            if search.node_prunable(idx) {
                continue;
            }
            if search.out_of_budget() {
                return Ok(search.result(false));
            }
            successors.extend(search.expand(idx, &mut registry)?);
        }
        successors.retain(|&i| !search.nodes[i].stale);
        sort_best_first(&search.nodes, &mut successors, direction);
        let rest = successors.split_off(successors.len().min(b));
        suspended.extend(rest.into_iter().map(|i| OpenEntry::of(&search.nodes, i, direction)));
        best = successors;
    }
}

pub fn solve(
    algorithm: Algorithm,
    model: &Model,
    evaluator: &dyn Evaluator,
    limits: Limits,
    options: SearchOptions,
) -> Result<SolveResult, SearchError> {
    match algorithm {
        Algorithm::Cabs => solve_cabs(model, evaluator, limits, options),
        Algorithm::Acps => solve_acps(model, evaluator, limits, options),
        Algorithm::Apps => solve_apps(model, evaluator, limits, options),
    }
}

#[cfg(test)]
mod tests;
