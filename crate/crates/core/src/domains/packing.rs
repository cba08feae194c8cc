//! 0-1 knapsack and four-moment portfolio optimization.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DomainError;
use crate::model::{
    bitset, BaseCase, Direction, Grounding, Model, State, Transition, Value, VariableSchema,
};

pub const WEIGHT: usize = 0;
pub const INDEX: usize = 1;
pub const SELECTED: usize = 2;

/// Items sorted by non-increasing profit/weight ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnapsackInstance {
    pub weights: Vec<f64>,
    pub profits: Vec<f64>,
    pub budget: f64,
}

impl KnapsackInstance {
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let n = self.n();
        if n == 0 || self.profits.len() != n {
            return Err(DomainError::InvalidInstance("weights and profits must be non-empty and aligned".into()));
        }
        if self.weights.iter().chain(&self.profits).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DomainError::InvalidInstance("weights and profits must be positive".into()));
        }
        if !(self.budget >= 0.0 && self.budget < self.weights.iter().sum::<f64>()) {
            return Err(DomainError::InvalidInstance("budget must lie in [0, total weight)".into()));
        }
        let ratios: Vec<f64> = (0..n).map(|j| self.profits[j] / self.weights[j]).collect();
        if ratios.windows(2).any(|w| w[0] < w[1]) {
            return Err(DomainError::InvalidInstance(
                "items must be sorted by non-increasing profit/weight ratio".into(),
            ));
        }
        Ok(())
    }

    /// Reorders items by non-increasing ratio, stable on ties.
    pub fn sorted(mut self) -> Self {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (self.profits[a] / self.weights[a], self.profits[b] / self.weights[b]);
            rb.total_cmp(&ra)
        });
        self.weights = order.iter().map(|&j| self.weights[j]).collect();
        self.profits = order.iter().map(|&j| self.profits[j]).collect();
        self
    }
}

/// Suffix aggregates used by the knapsack bounds.
#[derive(Clone, Debug)]
struct KnapsackSuffix {
    profit_sum: Vec<f64>,
    best_ratio: Vec<f64>,
}

impl KnapsackSuffix {
    fn new(inst: &KnapsackInstance) -> Self {
        let n = inst.n();
        let mut profit_sum = vec![0.0; n + 1];
        let mut best_ratio = vec![0.0; n + 1];
        for j in (0..n).rev() {
            profit_sum[j] = profit_sum[j + 1] + inst.profits[j];
            best_ratio[j] = (inst.profits[j] / inst.weights[j]).max(if j + 1 < n { best_ratio[j + 1] } else { 0.0 });
        }
        KnapsackSuffix { profit_sum, best_ratio }
    }

    fn bound(&self, budget: f64, x: f64, i: usize) -> f64 {
        let i = i.min(self.profit_sum.len() - 1);
        self.profit_sum[i].min(self.best_ratio[i] * (budget - x))
    }
}

pub fn knapsack_dual_bound(instance: &KnapsackInstance, state: &State) -> f64 {
    KnapsackSuffix::new(instance).bound(instance.budget, state.numeric(WEIGHT), state.element(INDEX))
}

fn packing_transitions(weights: Arc<Vec<f64>>, budget: f64, with_set: bool, take_cost: Arc<dyn Fn(&State) -> f64 + Send + Sync>) -> [Transition; 2] {
    let n = weights.len();
    let w_pre = weights.clone();
    let take = Transition::new(
        "take",
        Grounding::Single,
        move |s, _| {
            let i = s.element(INDEX);
            i < n && s.numeric(WEIGHT) + w_pre[i] <= budget
        },
        move |s, _| {
            let i = s.element(INDEX);
            let mut next = s.clone();
            next.set_numeric(WEIGHT, s.numeric(WEIGHT) + weights[i]);
            next.set_element(INDEX, i + 1);
            if with_set {
                next.set_mut(SELECTED).insert(i);
            }
            next
        },
        move |s, _| take_cost(s),
    )
    .with_precondition_label("i < n and x + w_i <= B");
    let skip = Transition::new(
        "skip",
        Grounding::Single,
        move |s, _| s.element(INDEX) < n,
        |s, _| {
            let mut next = s.clone();
            next.set_element(INDEX, s.element(INDEX) + 1);
            next
        },
        |_, _| 0.0,
    )
    .with_precondition_label("i < n");
    [take, skip]
}

pub fn build_knapsack_model(instance: &KnapsackInstance) -> Result<Model, DomainError> {
    instance.validate()?;
    let n = instance.n();
    let schema = vec![VariableSchema::numeric("x"), VariableSchema::element("i", n + 1)];
    let target = State::new(vec![Value::Numeric(0.0), Value::Element(0)]);
    let profits = Arc::new(instance.profits.clone());
    let [take, skip] = packing_transitions(
        Arc::new(instance.weights.clone()),
        instance.budget,
        false,
        Arc::new(move |s| profits[s.element(INDEX)]),
    );
    let suffix = Arc::new(KnapsackSuffix::new(instance));
    let (s1, s2) = (suffix.clone(), suffix);
    let budget = instance.budget;
    Ok(Model::builder("knapsack", schema, target, Direction::Maximize)
        .transition(take)
        .transition(skip)
        .base_case(BaseCase::new(move |s| s.element(INDEX) >= n, |_| 0.0))
        .dual_bound(move |s| s1.profit_sum[s.element(INDEX).min(n)])
        .dual_bound(move |s| s2.best_ratio[s.element(INDEX).min(n)] * (budget - s.numeric(WEIGHT)))
        .build()?)
}

/// Greedy decision for item `i`: take it iff it fits.
pub fn knapsack_greedy_take(instance: &KnapsackInstance, state: &State) -> Option<bool> {
    let i = state.element(INDEX);
    (i < instance.n()).then(|| state.numeric(WEIGHT) + instance.weights[i] <= instance.budget)
}

/// Per-item rows: four static columns then remaining capacity after taking
/// the item, not yet considered, is current, exceeds capacity.
pub fn knapsack_features(instance: &KnapsackInstance, state: &State) -> Vec<Vec<f64>> {
    let n = instance.n();
    let x = state.numeric(WEIGHT);
    let i = state.element(INDEX);
    let w_max = instance.weights.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let p_max = instance.profits.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let ratio_max = (0..n).map(|j| instance.profits[j] / instance.weights[j]).fold(f64::MIN_POSITIVE, f64::max);
    let inv_max = (0..n).map(|j| instance.weights[j] / instance.profits[j]).fold(f64::MIN_POSITIVE, f64::max);
    let b = instance.budget.max(1.0);
    (0..n)
        .map(|j| {
            let (w, p) = (instance.weights[j], instance.profits[j]);
            vec![
                w / w_max,
                p / p_max,
                (w / p) / inv_max,
                (p / w) / ratio_max,
                (instance.budget - x - w) / b,
                f64::from((j > i) as u8),
                f64::from((j == i) as u8),
                f64::from((x + w > instance.budget) as u8),
            ]
        })
        .collect()
}

/// Instance generation for the strongly correlated family.
pub fn random_knapsack<R: Rng>(n: usize, rng: &mut R) -> KnapsackInstance {
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
    let profits = weights.iter().map(|w| w + 10.0).collect();
    let budget = (0.5 * weights.iter().sum::<f64>()).ceil();
    KnapsackInstance { weights, profits, budget }.sorted()
}

pub fn fix_kp2() -> KnapsackInstance {
    KnapsackInstance {
        weights: vec![2.0, 3.0],
        profits: vec![3.0, 4.0],
        budget: 4.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioInstance {
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub deviation: Vec<f64>,
    pub skewness: Vec<f64>,
    pub kurtosis: Vec<f64>,
    pub budget: f64,
    /// Weights of mean, deviation, skewness and kurtosis.
    pub lambda: [f64; 4],
}

impl PortfolioInstance {
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let n = self.n();
        if n == 0 {
            return Err(DomainError::InvalidInstance("no investments".into()));
        }
        for (name, col) in [
            ("mean", &self.mean),
            ("deviation", &self.deviation),
            ("skewness", &self.skewness),
            ("kurtosis", &self.kurtosis),
        ] {
            if col.len() != n {
                return Err(DomainError::InvalidInstance(format!("{name} has {} entries for {n} investments", col.len())));
            }
            if col.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(DomainError::InvalidInstance(format!("{name} entries must be non-negative")));
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(DomainError::InvalidInstance("weights must be positive".into()));
        }
        if self.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(DomainError::InvalidInstance("lambda must be non-negative".into()));
        }
        if !(self.budget >= 0.0 && self.budget < self.weights.iter().sum::<f64>()) {
            return Err(DomainError::InvalidInstance("budget must lie in [0, total weight)".into()));
        }
        Ok(())
    }

    /// Objective of a selection: weighted mean sum minus deviation norm plus
    /// skewness norm minus kurtosis norm.
    pub fn objective(&self, selection: impl IntoIterator<Item = usize>) -> f64 {
        let (mut m, mut s2, mut g3, mut k4) = (0.0, 0.0, 0.0, 0.0);
        for j in selection {
            m += self.mean[j];
            s2 += self.deviation[j].powi(2);
            g3 += self.skewness[j].powi(3);
            k4 += self.kurtosis[j].powi(4);
        }
        let [l1, l2, l3, l4] = self.lambda;
        l1 * m - l2 * s2.sqrt() + l3 * g3.cbrt() - l4 * k4.sqrt().sqrt()
    }

    /// Greedy efficiency `(l1*mu - l2*sigma + l3*gamma - l4*kappa) / w`.
    pub fn efficiency(&self, j: usize) -> f64 {
        let [l1, l2, l3, l4] = self.lambda;
        (l1 * self.mean[j] - l2 * self.deviation[j] + l3 * self.skewness[j] - l4 * self.kurtosis[j]) / self.weights[j]
    }

    fn positive_rate(&self, j: usize) -> f64 {
        (self.lambda[0] * self.mean[j] + self.lambda[2] * self.skewness[j].powi(3).cbrt()) / self.weights[j]
    }

    /// Bound from taking every remaining investment, counting only the mean
    /// and skewness terms.
    pub fn remaining_positive_bound(&self, i: usize) -> f64 {
        let n = self.n();
        let (m, g3) = (i..n).fold((0.0, 0.0), |(m, g), j| (m + self.mean[j], g + self.skewness[j].powi(3)));
        self.lambda[0] * m + self.lambda[2] * g3.cbrt()
    }

    /// Bound from the best positive-term rate times the remaining budget.
    pub fn rate_bound(&self, i: usize, x: f64) -> f64 {
        let best = (i..self.n()).map(|j| self.positive_rate(j)).fold(0.0, f64::max);
        best * (self.budget - x)
    }
}

pub fn portfolio_dual_bound(instance: &PortfolioInstance, state: &State) -> f64 {
    let i = state.element(INDEX);
    instance
        .remaining_positive_bound(i)
        .min(instance.rate_bound(i, state.numeric(WEIGHT)))
}

pub fn build_portfolio_model(instance: &PortfolioInstance) -> Result<Model, DomainError> {
    instance.validate()?;
    let n = instance.n();
    let schema = vec![
        VariableSchema::numeric("x"),
        VariableSchema::element("i", n + 1),
        VariableSchema::set("Y", n),
    ];
    let target = State::new(vec![Value::Numeric(0.0), Value::Element(0), Value::Set(bitset(n, []))]);
    let inst = Arc::new(instance.clone());
    let cost_inst = inst.clone();
    let [take, skip] = packing_transitions(
        Arc::new(instance.weights.clone()),
        instance.budget,
        true,
        Arc::new(move |s| {
            let y = s.set(SELECTED);
            let i = s.element(INDEX);
            cost_inst.objective(y.ones().chain([i])) - cost_inst.objective(y.ones())
        }),
    );
    let (b1, b2) = (inst.clone(), inst);
    Ok(Model::builder("portfolio", schema, target, Direction::Maximize)
        .transition(take)
        .transition(skip)
        .base_case(BaseCase::new(move |s| s.element(INDEX) >= n, |_| 0.0))
        .dual_bound(move |s| b1.remaining_positive_bound(s.element(INDEX)))
        .dual_bound(move |s| b2.rate_bound(s.element(INDEX), s.numeric(WEIGHT)))
        .build()?)
}

/// Greedy decision for investment `i`: walk the remaining investments by
/// non-increasing efficiency, adding each that fits, and report whether `i`
/// was added.
pub fn portfolio_greedy_take(instance: &PortfolioInstance, state: &State) -> Option<bool> {
    let i = state.element(INDEX);
    let n = instance.n();
    if i >= n {
        return None;
    }
    let mut order: Vec<usize> = (i..n).collect();
    order.sort_by(|&a, &b| instance.efficiency(b).total_cmp(&instance.efficiency(a)));
    let mut x = state.numeric(WEIGHT);
    for j in order {
        if x + instance.weights[j] <= instance.budget {
            if j == i {
                return Some(true);
            }
            x += instance.weights[j];
        } else if j == i {
            return Some(false);
        }
    }
    Some(false)
}

fn l2_normalized(col: &[f64]) -> Vec<f64> {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        col.iter().map(|v| v / norm).collect()
    } else {
        vec![0.0; col.len()]
    }
}

/// Per-investment rows: five L2-normalized static columns, then remaining
/// capacity after taking the investment (same normalization as weights),
/// already considered, is current, exceeds capacity, already selected.
pub fn portfolio_features(instance: &PortfolioInstance, state: &State) -> Vec<Vec<f64>> {
    let n = instance.n();
    let x = state.numeric(WEIGHT);
    let i = state.element(INDEX);
    let y = state.set(SELECTED);
    let cols = [
        l2_normalized(&instance.weights),
        l2_normalized(&instance.mean),
        l2_normalized(&instance.deviation),
        l2_normalized(&instance.skewness),
        l2_normalized(&instance.kurtosis),
    ];
    let w_norm = instance.weights.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    (0..n)
        .map(|j| {
            let mut row: Vec<f64> = cols.iter().map(|c| c[j]).collect();
            row.push((instance.budget - x - instance.weights[j]) / w_norm);
            row.push(f64::from((j < i) as u8));
            row.push(f64::from((j == i) as u8));
            row.push(f64::from((x + instance.weights[j] > instance.budget) as u8));
            row.push(f64::from(y.contains(j) as u8));
            row
        })
        .collect()
}

pub fn random_portfolio<R: Rng>(n: usize, lambda: [f64; 4], rng: &mut R) -> PortfolioInstance {
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
    let mut column = || (0..n).map(|_| rng.gen_range(0.0..100.0)).collect::<Vec<f64>>();
    let (mean, deviation, skewness, kurtosis) = (column(), column(), column(), column());
    let budget = (0.5 * weights.iter().sum::<f64>()).ceil();
    PortfolioInstance {
        weights,
        mean,
        deviation,
        skewness,
        kurtosis,
        budget,
        lambda,
    }
}

pub const DEFAULT_LAMBDA: [f64; 4] = [1.0, 5.0, 5.0, 5.0];

/// Mean-only portfolio that reduces to [`fix_kp2`].
pub fn fix_pf2() -> PortfolioInstance {
    PortfolioInstance {
        weights: vec![2.0, 3.0],
        mean: vec![3.0, 4.0],
        deviation: vec![1.0, 1.0],
        skewness: vec![1.0, 1.0],
        kurtosis: vec![1.0, 1.0],
        budget: 4.0,
        lambda: [1.0, 0.0, 0.0, 0.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransitionId;

    const TAKE: TransitionId = TransitionId { family: 0, param: None };
    const SKIP: TransitionId = TransitionId { family: 1, param: None };

    fn kp(x: f64, i: usize) -> State {
        State::new(vec![Value::Numeric(x), Value::Element(i)])
    }

    #[test]
    fn kp2_semantics() {
        let m = build_knapsack_model(&fix_kp2()).unwrap();
        assert_eq!(m.direction(), Direction::Maximize);
        assert_eq!(m.apply_transition(&kp(0.0, 0), TAKE).unwrap(), kp(2.0, 1));
        assert_eq!(m.transition_cost(&kp(0.0, 0), TAKE).unwrap(), 3.0);
        assert_eq!(m.base_cost(&kp(2.0, 2)), Some(0.0));
        assert_eq!(m.solution_cost(&[TAKE, SKIP]).unwrap(), 3.0);
        assert_eq!(m.solution_cost(&[SKIP, TAKE]).unwrap(), 4.0);
        assert_eq!(m.exact_value(&kp(0.0, 0), 100).unwrap(), 4.0);
        // item 1 no longer fits after item 0
        assert_eq!(m.applicable_transitions(&kp(2.0, 1)).unwrap(), vec![SKIP]);
    }

    #[test]
    fn kp2_bounds() {
        let inst = fix_kp2();
        let m = build_knapsack_model(&inst).unwrap();
        assert_eq!(m.dual_bound(&kp(0.0, 0)), Some(6.0));
        assert_eq!(knapsack_dual_bound(&inst, &kp(0.0, 0)), 6.0);
        assert_eq!(m.dual_bound(&kp(3.0, 2)), Some(0.0));
    }

    #[test]
    fn kp2_greedy_and_features() {
        let inst = fix_kp2();
        assert_eq!(knapsack_greedy_take(&inst, &kp(0.0, 0)), Some(true));
        assert_eq!(knapsack_greedy_take(&inst, &kp(2.0, 1)), Some(false));
        assert_eq!(knapsack_greedy_take(&inst, &kp(2.0, 2)), None);
        let rows = knapsack_features(&inst, &kp(2.0, 1));
        assert_eq!(rows[1][7], 1.0);
        assert_eq!(rows[1][6], 1.0);
        assert_eq!(rows[0][5], 0.0);
    }

    #[test]
    fn knapsack_loader_rejects_unsorted() {
        let inst = KnapsackInstance {
            weights: vec![3.0, 2.0],
            profits: vec![4.0, 3.0],
            budget: 4.0,
        };
        assert!(build_knapsack_model(&inst).is_err());
        assert!(build_knapsack_model(&inst.sorted()).is_ok());
    }

    #[test]
    fn portfolio_objective_examples() {
        let mut inst = fix_pf2();
        assert_eq!(inst.objective([]), 0.0);
        inst.lambda = [1.0, 1.0, 0.0, 0.0];
        inst.mean = vec![3.0, 4.0];
        inst.deviation = vec![3.0, 4.0];
        assert_eq!(inst.objective([0, 1]), 2.0);
        inst.lambda = [1.0, 10.0, 0.0, 0.0];
        assert!(inst.objective([0]) < inst.objective([]));
    }

    #[test]
    fn pf2_reduces_to_kp2() {
        let m = build_portfolio_model(&fix_pf2()).unwrap();
        let s0 = m.target().clone();
        assert_eq!(m.transition_cost(&s0, TAKE).unwrap(), 3.0);
        assert_eq!(m.exact_value(&s0, 100).unwrap(), 4.0);
    }

    #[test]
    fn portfolio_features_have_unit_static_columns() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let inst = random_portfolio(6, DEFAULT_LAMBDA, &mut rng);
        let m = build_portfolio_model(&inst).unwrap();
        let rows = portfolio_features(&inst, m.target());
        for col in 0..5 {
            let norm: f64 = rows.iter().map(|r| r[col] * r[col]).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_knapsack_is_strongly_correlated() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let inst = random_knapsack(12, &mut rng);
        inst.validate().unwrap();
        for j in 0..12 {
            assert_eq!(inst.profits[j], inst.weights[j] + 10.0);
        }
    }
}
