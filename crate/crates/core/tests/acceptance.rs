//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any blocking criterion fails. Criterion 8 is informational; set
//! `DIDP_ACCEPTANCE_FULL=1` to run it with the full 30-minute training budget.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use didp_rl::bench::compute_gap;
use didp_rl::domains::packing::{KnapsackInstance, INDEX, WEIGHT};
use didp_rl::domains::routing::{TspInstance, CURRENT, UNVISITED};
use didp_rl::domains::{DomainTag, GeneratorParams, Instance};
use didp_rl::guidance::{Guidance, GuidanceKind};
use didp_rl::learning::dqn::{dqn_loss, Experience};
use didp_rl::learning::mdp::Mdp;
use didp_rl::learning::network::{Architecture, HeadKind, NetworkParams};
use didp_rl::learning::ppo::{ppo_loss, PpoCoefficients, PpoSample};
use didp_rl::learning::train::{greedy_rollout, train_dqn, train_ppo, InstanceSource, TrainConfig};
use didp_rl::model::{Direction, ExactOracle, Model, State, DEFAULT_ORACLE_CAP};
use didp_rl::search::{solve, Algorithm, Limits, SearchOptions, SolveResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force, costs_agree, is_monotone, suite};

const DOMAINS: [DomainTag; 4] = [DomainTag::Tsp, DomainTag::Tsptw, DomainTag::Knapsack, DomainTag::Portfolio];

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

struct SuiteInstance {
    name: String,
    instance: Arc<Instance>,
    model: Arc<Model>,
    optimum: Option<f64>,
}

fn build_suite() -> Vec<SuiteInstance> {
    DOMAINS
        .iter()
        .flat_map(|&tag| suite(tag))
        .map(|(name, inst)| {
            let optimum = brute_force(&inst);
            let model = Arc::new(inst.build_model().unwrap());
            SuiteInstance {
                name,
                instance: Arc::new(inst),
                model,
                optimum,
            }
        })
        .collect()
}

/// Checks one search run against the brute-force optimum and records trace
/// monotonicity for criterion 4.
fn check_run(si: &SuiteInstance, label: &str, r: &SolveResult, traces_ok: &mut Vec<String>) -> Result<(), String> {
    let maximize = si.model.direction() == Direction::Maximize;
    if !is_monotone(&r.anytime_trace, maximize) {
        traces_ok.push(format!("{} {label}: {:?}", si.name, r.anytime_trace));
    }
    if !r.proved_optimal {
        return Err(format!("{} {label}: not proved optimal", si.name));
    }
    match (r.cost(), si.optimum) {
        (None, None) => Ok(()),
        (Some(got), Some(want)) if costs_agree(si.instance.tag(), got, want) => Ok(()),
        (got, want) => Err(format!("{} {label}: cost {got:?}, brute force {want:?}", si.name)),
    }
}

fn criterion1(suite: &[SuiteInstance], bad_traces: &mut Vec<String>) -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    for si in suite {
        for algo in Algorithm::ALL {
            let r = solve(algo, &si.model, &Guidance::DualBound, Limits::default(), SearchOptions::default())
                .map_err(|e| format!("{} {algo}: {e}", si.name))?;
            check_run(si, &format!("{algo}-dual"), &r, bad_traces)?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs over {} instances in {:.1}s", suite.len(), start.elapsed().as_secs_f64()))
}

fn within(bound: f64, value: f64, upper: bool) -> bool {
    let slack = 1e-9 * value.abs().max(1.0);
    if upper {
        bound >= value - slack
    } else {
        bound <= value + slack
    }
}

/// Each individual bound of every domain against the exact value of every
/// reachable state.
fn criterion2(suite: &[SuiteInstance]) -> Outcome {
    let start = Instant::now();
    let mut states = 0;
    for si in suite {
        let mut oracle = ExactOracle::new(&si.model, DEFAULT_ORACLE_CAP);
        oracle.value(si.model.target()).map_err(|e| e.to_string())?;
        for (state, &v) in oracle.memo() {
            if !v.is_finite() {
                continue;
            }
            states += 1;
            let bounds: Vec<(&str, f64)> = match si.instance.as_ref() {
                Instance::Tsp(t) => tsp_bounds(t, state),
                Instance::Tsptw(t) => tsp_bounds(&t.tsp, state),
                Instance::Knapsack(k) => knapsack_bounds(k, state),
                Instance::Portfolio(p) => {
                    let (i, x) = (state.element(INDEX), state.numeric(WEIGHT));
                    vec![("remaining", p.remaining_positive_bound(i)), ("rate", p.rate_bound(i, x))]
                }
            };
            let upper = si.model.direction() == Direction::Maximize;
            for (name, b) in bounds.into_iter().chain(si.model.dual_bound(state).map(|b| ("model", b))) {
                if !within(b, v, upper) {
                    return Err(format!("{}: {name} bound {b} vs exact {v} at {state:?}", si.name));
                }
            }
        }
    }
    Ok(format!("{states} reachable states checked in {:.1}s", start.elapsed().as_secs_f64()))
}

fn tsp_bounds(t: &TspInstance, state: &State) -> Vec<(&'static str, f64)> {
    let (min_in, min_out) = (t.min_in(), t.min_out());
    let u = state.set(UNVISITED);
    let i = state.element(CURRENT);
    let inbound = min_in[0] + u.ones().map(|j| min_in[j]).sum::<f64>();
    let outbound = if u.contains(i) { 0.0 } else { min_out[i] } + u.ones().map(|j| min_out[j]).sum::<f64>();
    vec![("min-in", inbound), ("min-out", outbound)]
}

fn knapsack_bounds(k: &KnapsackInstance, state: &State) -> Vec<(&'static str, f64)> {
    let (x, i) = (state.numeric(WEIGHT), state.element(INDEX));
    let rest = i.min(k.n())..k.n();
    let profit: f64 = rest.clone().map(|j| k.profits[j]).sum();
    let ratio = rest.map(|j| k.profits[j] / k.weights[j]).fold(0.0, f64::max);
    vec![("profit-sum", profit), ("ratio", ratio * (k.budget - x))]
}

fn random_net(tag: DomainTag, head: HeadKind, seed: u64) -> Arc<NetworkParams> {
    let arch = Architecture {
        embed_dim: 8,
        hidden_dim: 16,
        hidden_layers: 1,
    };
    Arc::new(NetworkParams::new(tag, head, Instance::feature_width(tag), arch, seed))
}

fn criterion3(suite: &[SuiteInstance], bad_traces: &mut Vec<String>) -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    for si in suite {
        let tag = si.instance.tag();
        for kind in GuidanceKind::ALL {
            let guidance = match kind {
                GuidanceKind::Dual => Guidance::DualBound,
                GuidanceKind::Zero => Guidance::ZeroH,
                GuidanceKind::Greedy => Guidance::greedy(Arc::clone(&si.instance)),
                GuidanceKind::Dqn => Guidance::value_net(
                    random_net(tag, HeadKind::Q, 7),
                    Arc::clone(&si.instance),
                    Arc::clone(&si.model),
                    tag.default_beta(),
                )
                .unwrap(),
                GuidanceKind::Ppo => {
                    Guidance::policy_net(random_net(tag, HeadKind::Actor, 7), Arc::clone(&si.instance), Arc::clone(&si.model))
                        .unwrap()
                }
            };
            for algo in Algorithm::ALL {
                let r = solve(algo, &si.model, &guidance, Limits::default(), SearchOptions::default())
                    .map_err(|e| format!("{} {algo}-{kind}: {e}", si.name))?;
                check_run(si, &format!("{algo}-{kind}"), &r, bad_traces)?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs in {:.1}s", start.elapsed().as_secs_f64()))
}

/// Relative error `|a - n| / max(|a| + |n|, 1e-12)` over the whole gradient.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn central_difference(params: &NetworkParams, loss: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let base = params.flat();
    let mut p = params.clone();
    (0..base.len())
        .map(|k| {
            let mut w = base.clone();
            w[k] = base[k] + h;
            p.set_flat(&w);
            let up = loss(&p);
            w[k] = base[k] - h;
            p.set_flat(&w);
            let down = loss(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> (Vec<bool>, usize) {
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
    let action = rng.gen_range(0..n);
    mask[action] = true;
    (mask, action)
}

fn criterion5() -> Outcome {
    let start = Instant::now();
    let arch = Architecture {
        embed_dim: 6,
        hidden_dim: 8,
        hidden_layers: 2,
    };
    let tag = DomainTag::Tsp;
    let width = Instance::feature_width(tag);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..7);

        let online = NetworkParams::new(tag, HeadKind::Q, width, arch, rng.gen());
        let target = NetworkParams::new(tag, HeadKind::Q, width, arch, rng.gen());
        let batch: Vec<Experience> = (0..4)
            .map(|b| {
                let (next_mask, _) = random_mask(&mut rng, n);
                Experience {
                    features: random_rows(&mut rng, n, width),
                    focus: Some(rng.gen_range(0..n)),
                    action: rng.gen_range(0..n),
                    reward: rng.gen_range(-1.0..1.0),
                    next_features: random_rows(&mut rng, n, width),
                    next_focus: Some(rng.gen_range(0..n)),
                    next_mask,
                    terminal: b == 3,
                }
            })
            .collect();
        let analytic = dqn_loss(&online, &target, &batch, 0.95).unwrap().grads.flat();
        let numeric = central_difference(&online, |p| dqn_loss(p, &target, &batch, 0.95).unwrap().loss);
        worst = worst.max(relative_error(&analytic, &numeric));

        let actor = NetworkParams::new(tag, HeadKind::Actor, width, arch, rng.gen());
        let critic = NetworkParams::new(tag, HeadKind::Critic, width, arch, rng.gen());
        let samples: Vec<PpoSample> = (0..4)
            .map(|_| {
                let (mask, action) = random_mask(&mut rng, n);
                PpoSample {
                    features: random_rows(&mut rng, n, width),
                    focus: Some(rng.gen_range(0..n)),
                    mask,
                    action,
                    old_log_prob: rng.gen_range(0.05f64..1.0).ln(),
                    ret: rng.gen_range(-1.0..1.0),
                }
            })
            .collect();
        let coef = PpoCoefficients {
            clip: 0.2,
            entropy: 1e-2,
            normalize_advantage: seed % 2 == 0,
        };
        let out = ppo_loss(&actor, &critic, &samples, coef).unwrap();
        let numeric = central_difference(&actor, |p| ppo_loss(p, &critic, &samples, coef).unwrap().actor_loss);
        worst = worst.max(relative_error(&out.actor_grads.flat(), &numeric));
        let numeric = central_difference(&critic, |p| ppo_loss(&actor, p, &samples, coef).unwrap().critic_loss);
        worst = worst.max(relative_error(&out.critic_grads.flat(), &numeric));
    }
    let detail = format!("worst relative error {worst:.2e} in {:.1}s", start.elapsed().as_secs_f64());
    if worst <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Every action sequence from `state`, as (return, completed) pairs.
fn all_episodes(mdp: &Mdp, state: &State, acc: f64, out: &mut Vec<(f64, bool)>) {
    let mask = mdp.mask(state);
    if mdp.model().is_base(state) || !mask.iter().any(|&m| m) {
        out.push((acc, mdp.model().is_base(state)));
        return;
    }
    for (a, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let step = mdp.step(state, a).unwrap();
        all_episodes(mdp, &step.next, acc + step.reward, out);
    }
}

fn criterion6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = rng.gen_range(3..12);
        let inst = Arc::new(Instance::generate(DomainTag::Tsp, n, k, &GeneratorParams::default()).unwrap());
        let beta = DomainTag::Tsp.default_beta();
        let mdp = Mdp::new(inst, DomainTag::Tsp, beta).unwrap();
        let mut state = mdp.initial_state();
        let mut total = 0.0;
        let mut sequence = Vec::new();
        loop {
            let actions: Vec<usize> = mdp.mask(&state).iter().enumerate().filter(|(_, &m)| m).map(|(a, _)| a).collect();
            let a = actions[rng.gen_range(0..actions.len())];
            let step = mdp.step(&state, a).unwrap();
            total += step.reward;
            sequence.push(mdp.transition_of(a));
            state = step.next;
            if step.terminal {
                break;
            }
        }
        let cost = mdp.model().solution_cost(&sequence).map_err(|e| e.to_string())?;
        worst = worst.max((total + beta * cost).abs());
    }
    if worst > 1e-12 {
        return Err(format!("reward sum deviates from -beta * cost by {worst:e}"));
    }
    let mut checked = 0;
    for seed in 0..20 {
        let n = 4 + (seed % 3) as usize;
        let inst = Arc::new(Instance::generate(DomainTag::Tsptw, n, 100 + seed, &GeneratorParams::default()).unwrap());
        let mdp = Mdp::new(inst, DomainTag::Tsptw, DomainTag::Tsptw.default_beta()).unwrap();
        let mut episodes = Vec::new();
        all_episodes(&mdp, &mdp.initial_state(), 0.0, &mut episodes);
        let worst_complete = episodes.iter().filter(|e| e.1).map(|e| e.0).fold(f64::INFINITY, f64::min);
        let best_incomplete = episodes.iter().filter(|e| !e.1).map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        if worst_complete <= best_incomplete {
            return Err(format!("tsptw seed {seed}: complete {worst_complete} <= incomplete {best_incomplete}"));
        }
        checked += episodes.len();
    }
    Ok(format!("max |sum r + beta c| = {worst:.1e}; {checked} TSPTW episodes enumerated"))
}

/// Desk-scale network and optimizer settings shared by criterion 7 runs.
fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        learning_rate: 1e-3,
        arch: Architecture {
            embed_dim: 16,
            hidden_dim: 32,
            hidden_layers: 2,
        },
        episodes: 2000,
        seed,
        target_sync: 100,
        ..TrainConfig::default()
    }
}

/// Larger than the n=50 default so that Q-values of a 10-item instance stand
/// out of the optimizer noise.
const KNAPSACK_DESK_BETA: f64 = 1e-2;

fn desk_knapsack_dqn(seed: u64) -> TrainConfig {
    TrainConfig {
        beta: KNAPSACK_DESK_BETA,
        ..desk_config(seed)
    }
}

/// PPO needs more exploration and more passes per batch than the defaults to
/// leave the greedy packing within 2k episodes.
fn desk_knapsack_ppo(seed: u64) -> TrainConfig {
    TrainConfig {
        beta: KNAPSACK_DESK_BETA,
        entropy_coef: 0.1,
        epochs: 40,
        ..desk_config(seed)
    }
}

fn criterion7() -> Outcome {
    let start = Instant::now();
    let kp = Arc::new(Instance::generate(DomainTag::Knapsack, 10, 0, &GeneratorParams::default()).unwrap());
    let optimum = brute_force(&kp).unwrap();
    let kp_model = kp.build_model().unwrap();
    let kp_mdp = Mdp::new(Arc::clone(&kp), DomainTag::Knapsack, KNAPSACK_DESK_BETA).unwrap();
    let source = InstanceSource::Fixed(Arc::clone(&kp));
    let close = |seq: &[didp_rl::model::TransitionId]| {
        kp_model.solution_cost(seq).is_ok_and(|c| c >= 0.98 * optimum)
    };
    let mut dqn_hits = 0;
    let mut ppo_hits = 0;
    for seed in 0..10 {
        let out = train_dqn(&source, &desk_knapsack_dqn(seed)).map_err(|e| e.to_string())?;
        if close(&greedy_rollout(&kp_mdp, &out.params).unwrap().transitions) {
            dqn_hits += 1;
        }
        let out = train_ppo(&source, &desk_knapsack_ppo(seed)).map_err(|e| e.to_string())?;
        if close(&greedy_rollout(&kp_mdp, &out.actor).unwrap().transitions) {
            ppo_hits += 1;
        }
    }

    let tsp = Arc::new(Instance::fixture("fix-tsp3").unwrap());
    let tsp_model = tsp.build_model().unwrap();
    let tsp_mdp = Mdp::new(Arc::clone(&tsp), DomainTag::Tsp, DomainTag::Tsp.default_beta()).unwrap();
    let source = InstanceSource::Fixed(Arc::clone(&tsp));
    let mut tour_hits = 0;
    for seed in 0..10 {
        let out = train_ppo(&source, &desk_config(seed)).map_err(|e| e.to_string())?;
        let r = greedy_rollout(&tsp_mdp, &out.actor).unwrap();
        if tsp_model.solution_cost(&r.transitions).ok() == Some(4.0) {
            tour_hits += 1;
        }
    }
    let detail = format!(
        "knapsack n=10 (optimum {optimum}) within 2%: DQN {dqn_hits}/10, PPO {ppo_hits}/10; FIX-TSP3 PPO optimal {tour_hits}/10; {:.0}s",
        start.elapsed().as_secs_f64()
    );
    if dqn_hits >= 8 && ppo_hits >= 8 && tour_hits >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion8() -> Outcome {
    let full = std::env::var("DIDP_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let budget = if full { 1800.0 } else { 60.0 };
    let source = InstanceSource::Random {
        domain: DomainTag::Tsp,
        n: 20,
        params: GeneratorParams::default(),
    };
    let config = TrainConfig {
        episodes: usize::MAX,
        time_limit_secs: Some(budget),
        ..TrainConfig::for_domain(DomainTag::Tsp, didp_rl::learning::train::Algorithm::Ppo, 20)
    };
    let out = train_ppo(&source, &config).map_err(|e| e.to_string())?;
    let actor = Arc::new(out.actor);
    let limits = Limits::expansions(10_000);
    let mut wins = 0;
    let (mut ppo_gap, mut dual_gap) = (0.0, 0.0);
    for seed in 0..20 {
        let inst = Arc::new(Instance::generate(DomainTag::Tsp, 20, 10_000 + seed, &GeneratorParams::default()).unwrap());
        let model = Arc::new(inst.build_model().unwrap());
        let ppo = Guidance::policy_net(Arc::clone(&actor), Arc::clone(&inst), Arc::clone(&model)).unwrap();
        let a = solve(Algorithm::Cabs, &model, &ppo, limits, SearchOptions::default()).map_err(|e| e.to_string())?;
        let b = solve(Algorithm::Cabs, &model, &Guidance::DualBound, limits, SearchOptions::default())
            .map_err(|e| e.to_string())?;
        let best = [a.cost(), b.cost()].into_iter().flatten().fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            continue;
        }
        let (ga, gb) = (compute_gap(a.cost(), best).unwrap(), compute_gap(b.cost(), best).unwrap());
        ppo_gap += ga / 20.0;
        dual_gap += gb / 20.0;
        if ga <= gb {
            wins += 1;
        }
    }
    let detail = format!(
        "{} episodes in {budget:.0}s; PPO gap <= dual gap on {wins}/20; mean gap PPO {ppo_gap:.2}% vs dual {dual_gap:.2}%{}",
        out.log.episode_returns.len(),
        if full { "" } else { " (short budget; DIDP_ACCEPTANCE_FULL=1 for 30 min)" }
    );
    if wins >= 12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion9() -> Outcome {
    let table: [(Option<f64>, f64, f64); 10] = [
        (Some(9.0), 8.0, 12.5),
        (None, 8.0, 100.0),
        (Some(8.0), 8.0, 0.0),
        (Some(12.0), 8.0, 50.0),
        (Some(4.0), 8.0, 50.0),
        (Some(110.0), 100.0, 10.0),
        (Some(75.0), 100.0, 25.0),
        (Some(-3.0), -4.0, 25.0),
        (None, -4.0, 100.0),
        (Some(0.0), 5.0, 100.0),
    ];
    for (cost, best, want) in table {
        let got = compute_gap(cost, best).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("gap({cost:?}, {best}) = {got}, expected {want}"));
        }
    }
    if compute_gap(Some(1.0), 0.0).is_ok() {
        return Err("best = 0 must be rejected".into());
    }
    Ok("10 cases exact; best = 0 rejected".into())
}

fn report(number: u32, outcome: &Outcome, blocking: bool) -> bool {
    match outcome {
        Ok(detail) => println!("criterion {number}: PASS ({detail})"),
        Err(detail) if blocking => println!("criterion {number}: FAIL ({detail})"),
        Err(detail) => println!("criterion {number}: FAIL, informational ({detail})"),
    }
    outcome.is_ok() || !blocking
}

/// Criteria named on the command line (`cargo test --test acceptance -- 1 5`),
/// or all of them.
fn selected() -> impl Fn(u32) -> bool {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    move |k| picked.is_empty() || picked.contains(&k)
}

fn main() -> ExitCode {
    let run = selected();
    let mut ok = true;
    if run(1) || run(2) || run(3) || run(4) {
        let suite = build_suite();
        let mut bad_traces = Vec::new();
        if run(1) || run(4) {
            ok &= report(1, &criterion1(&suite, &mut bad_traces), true);
        }
        if run(2) {
            ok &= report(2, &criterion2(&suite), true);
        }
        if run(3) || run(4) {
            ok &= report(3, &criterion3(&suite, &mut bad_traces), true);
        }
        if run(4) {
            let c4 = if bad_traces.is_empty() {
                Ok("every trace of criteria 1 and 3 monotone".to_owned())
            } else {
                Err(format!("{} non-monotone traces, first: {}", bad_traces.len(), bad_traces[0]))
            };
            ok &= report(4, &c4, true);
        }
    }
    let rest: [(u32, Check, bool); 5] = [
        (5, criterion5, true),
        (6, criterion6, true),
        (7, criterion7, true),
        (8, criterion8, false),
        (9, criterion9, true),
    ];
    for (k, check, blocking) in rest {
        if run(k) {
            ok &= report(k, &check(), blocking);
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
