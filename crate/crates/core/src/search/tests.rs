use std::sync::Arc;

use super::*;
use crate::domains::routing::fix_tsptw3;
use crate::domains::Instance;
use crate::guidance::Guidance;

fn model(name: &str) -> Model {
    Instance::fixture(name).unwrap().build_model().unwrap()
}

fn all_algorithms(m: &Model, eval: &dyn Evaluator) -> Vec<SolveResult> {
    Algorithm::ALL
        .into_iter()
        .map(|a| solve(a, m, eval, Limits::default(), SearchOptions::default()).unwrap())
        .collect()
}

/// Prefers `visit(2)` over `visit(1)` at the root.
struct PreferTwo;

impl Evaluator for PreferTwo {
    fn evaluate(&self, _: &Model, _: ParentView<'_>, children: &mut [Child]) -> Result<(), GuidanceError> {
        for c in children {
            c.f = if c.transition.param == Some(2) { 0.0 } else { 1.0 };
        }
        Ok(())
    }
}

#[test]
fn prune_boundaries() {
    assert!(prune_test(3.0, 2.0, Some(5.0), Direction::Minimize));
    assert!(!prune_test(3.0, 1.0, Some(5.0), Direction::Minimize));
    assert!(prune_test(3.0, f64::INFINITY, None, Direction::Minimize));
    assert!(!prune_test(3.0, 100.0, None, Direction::Minimize));
    assert!(prune_test(3.0, 1.0, Some(4.0), Direction::Maximize));
    assert!(!prune_test(3.0, 2.0, Some(4.0), Direction::Maximize));
    assert!(prune_test(0.0, f64::NEG_INFINITY, None, Direction::Maximize));
}

#[test]
fn beam_on_tsp3() {
    let m = model("fix-tsp3");
    let out = beam_search_once(&m, &Guidance::DualBound, 2, None, SearchOptions::default()).unwrap();
    assert_eq!(out.incumbent.unwrap().cost, 4.0);
    assert!(out.complete);

    let out = beam_search_once(&m, &PreferTwo, 1, None, SearchOptions::default()).unwrap();
    assert_eq!(out.incumbent.unwrap().cost, 15.0);
    assert!(!out.complete);

    assert!(matches!(
        beam_search_once(&m, &Guidance::DualBound, 0, None, SearchOptions::default()),
        Err(SearchError::InvalidArgument(_))
    ));
}

#[test]
fn beam_on_tsptw3_any_width() {
    let m = model("fix-tsptw3");
    for w in [1, 2, 3, 8] {
        let out = beam_search_once(&m, &Guidance::DualBound, w, None, SearchOptions::default()).unwrap();
        assert_eq!(out.incumbent.unwrap().cost, 4.0);
    }
}

#[test]
fn fixtures_solve_optimally() {
    for (name, cost) in [("fix-tsp3", 4.0), ("fix-kp2", 4.0), ("fix-tsptw3", 4.0), ("fix-pf2", 4.0)] {
        let m = model(name);
        for (a, r) in Algorithm::ALL.iter().zip(all_algorithms(&m, &Guidance::DualBound)) {
            assert!(r.proved_optimal, "{name} {a}");
            let best = r.best.unwrap();
            assert_eq!(best.cost, cost, "{name} {a}");
            assert_eq!(m.solution_cost(&best.sequence).unwrap(), cost);
        }
    }
}

#[test]
fn unreachable_window_is_proved_infeasible() {
    let mut inst = fix_tsptw3();
    inst.due[1] = 0.0;
    let m = Instance::Tsptw(inst).build_model().unwrap();
    for r in all_algorithms(&m, &Guidance::DualBound) {
        assert!(r.best.is_none());
        assert!(r.proved_optimal);
        assert!(r.anytime_trace.is_empty());
    }
}

#[test]
fn expansion_limits_are_respected() {
    let m = model("fix-tsp3");
    for a in Algorithm::ALL {
        let r = solve(a, &m, &Guidance::DualBound, Limits::expansions(1), SearchOptions::default()).unwrap();
        assert!(r.expansions <= 1);
        assert!(!r.proved_optimal);
        if let Some(best) = &r.best {
            assert!(best.cost == 4.0 || best.cost == 15.0);
            assert_eq!(r.anytime_trace.last().unwrap().1, best.cost);
        }
        let r = solve(a, &m, &Guidance::DualBound, Limits::expansions(0), SearchOptions::default()).unwrap();
        assert_eq!(r.expansions, 0);
        assert!(r.best.is_none());
        assert!(r.anytime_trace.is_empty());
    }
}

#[test]
fn every_guidance_is_sound_on_fixtures() {
    for name in ["fix-tsp3", "fix-tsptw3", "fix-kp2", "fix-pf2"] {
        let inst = Arc::new(Instance::fixture(name).unwrap());
        let m = inst.build_model().unwrap();
        for g in [Guidance::DualBound, Guidance::ZeroH, Guidance::greedy(Arc::clone(&inst))] {
            for r in all_algorithms(&m, &g) {
                assert!(r.proved_optimal);
                assert_eq!(r.cost(), Some(4.0), "{name}");
            }
        }
    }
}

#[test]
fn traces_are_monotone_and_end_at_best() {
    let m = model("fix-tsp3");
    let r = solve_cabs(&m, &PreferTwo, Limits::default(), SearchOptions::default()).unwrap();
    assert_eq!(r.anytime_trace.iter().map(|t| t.1).collect::<Vec<_>>(), vec![15.0, 4.0]);
    assert!(r.anytime_trace.windows(2).all(|w| w[0].0 <= w[1].0));
    assert_eq!(r.best.unwrap().expansions_at_discovery, r.anytime_trace[1].0);
}
