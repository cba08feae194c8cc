//! Brute-force enumerators and instance suites shared by the integration tests.
#![allow(dead_code)]

use didp_rl::domains::packing::{KnapsackInstance, PortfolioInstance};
use didp_rl::domains::routing::{TspInstance, TsptwInstance};
use didp_rl::domains::{DomainTag, GeneratorParams, Instance};

/// Number of instances per domain in the small suite.
pub const SUITE_SIZE: u64 = 20;

/// Problem size for suite member `seed`: 5..=8 for routing and portfolio,
/// 10..=15 for knapsack.
pub fn suite_n(tag: DomainTag, seed: u64) -> usize {
    match tag {
        DomainTag::Knapsack => 10 + (seed % 6) as usize,
        _ => 5 + (seed % 4) as usize,
    }
}

pub fn suite(tag: DomainTag) -> Vec<(String, Instance)> {
    (0..SUITE_SIZE)
        .map(|seed| {
            let n = suite_n(tag, seed);
            let inst = Instance::generate(tag, n, seed, &GeneratorParams::default()).unwrap();
            (format!("{}-n{n}-s{seed}", tag.as_str()), inst)
        })
        .collect()
}

/// All permutations of `items` (Heap's algorithm).
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a = items.to_vec();
    let mut out = Vec::new();
    heap(a.len(), &mut a, &mut out);
    out
}

pub fn tour_cost(travel: &[Vec<f64>], order: &[usize]) -> f64 {
    let mut cur = 0;
    let mut cost = 0.0;
    for &j in order {
        cost += travel[cur][j];
        cur = j;
    }
    cost + travel[cur][0]
}

pub fn brute_tsp(inst: &TspInstance) -> f64 {
    let customers: Vec<usize> = (1..inst.n()).collect();
    permutations(&customers)
        .iter()
        .map(|p| tour_cost(&inst.travel, p))
        .fold(f64::INFINITY, f64::min)
}

/// Arrival at `j` must not exceed its due date; early arrivals wait. The
/// return to the depot is unconstrained.
pub fn tsptw_feasible(inst: &TsptwInstance, order: &[usize]) -> bool {
    let c = &inst.tsp.travel;
    let (mut cur, mut t) = (0, 0.0);
    for &j in order {
        if t + c[cur][j] > inst.due[j] {
            return false;
        }
        t = f64::max(t + c[cur][j], inst.ready[j]);
        cur = j;
    }
    true
}

/// Optimal TSPTW cost, or `None` if no permutation is feasible.
pub fn brute_tsptw(inst: &TsptwInstance) -> Option<f64> {
    let customers: Vec<usize> = (1..inst.n()).collect();
    permutations(&customers)
        .iter()
        .filter(|p| tsptw_feasible(inst, p))
        .map(|p| tour_cost(&inst.tsp.travel, p))
        .reduce(f64::min)
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n).map(move |mask| (0..n).filter(|&j| mask >> j & 1 == 1).collect())
}

pub fn brute_knapsack(inst: &KnapsackInstance) -> f64 {
    subsets(inst.n())
        .filter(|s| s.iter().map(|&j| inst.weights[j]).sum::<f64>() <= inst.budget)
        .map(|s| s.iter().map(|&j| inst.profits[j]).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn brute_portfolio(inst: &PortfolioInstance) -> f64 {
    subsets(inst.n())
        .filter(|s| s.iter().map(|&j| inst.weights[j]).sum::<f64>() <= inst.budget)
        .map(|s| inst.objective(s))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Brute-force optimum, `None` when infeasible.
pub fn brute_force(inst: &Instance) -> Option<f64> {
    match inst {
        Instance::Tsp(i) => Some(brute_tsp(i)),
        Instance::Tsptw(i) => brute_tsptw(i),
        Instance::Knapsack(i) => Some(brute_knapsack(i)),
        Instance::Portfolio(i) => Some(brute_portfolio(i)),
    }
}

/// Exact match for integer-cost domains, 1e-9 relative for portfolio.
pub fn costs_agree(tag: DomainTag, got: f64, want: f64) -> bool {
    match tag {
        DomainTag::Portfolio => (got - want).abs() <= 1e-9 * want.abs().max(1.0),
        _ => got == want,
    }
}

pub fn is_monotone(trace: &[(u64, f64)], maximize: bool) -> bool {
    trace.windows(2).all(|w| {
        let (a, b) = (w[0].1, w[1].1);
        if maximize {
            b >= a
        } else {
            b <= a
        }
    })
}
