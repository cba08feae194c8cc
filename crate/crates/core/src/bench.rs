//! Experiment running, the gap metric, sampling baselines and result export.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, DomainTag, GeneratorParams, Instance};
use crate::guidance::{Child, Evaluator, Guidance, GuidanceError, GuidanceKind, ParentView};
use crate::learning::io::{load_params, WeightFileError};
use crate::learning::network::masked_softmax;
use crate::model::{saturating_add, Direction, Model, State, TransitionId};
use crate::search::{solve, Algorithm, Limits, SearchError, SearchOptions};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DIDP_OUTPUT_DIR";
/// Version of the CSV and JSON result layouts.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;
/// Default number of sampled rollouts.
pub const DEFAULT_SAMPLE_COUNT: usize = 1280;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("gap is undefined when the best known cost is 0")]
    UndefinedGap,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("weight file {path} is for {found}, the experiment domain is {expected}")]
    WeightDomainMismatch { path: PathBuf, found: DomainTag, expected: DomainTag },
    #[error("{path}: {source}")]
    Weights { path: PathBuf, source: WeightFileError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Relative gap in percent; a missing cost counts as 100.
pub fn compute_gap(cost: Option<f64>, best: f64) -> Result<f64, BenchError> {
    if best == 0.0 {
        return Err(BenchError::UndefinedGap);
    }
    Ok(match cost {
        None => 100.0,
        Some(c) => (c - best).abs() / best.abs() * 100.0,
    })
}

fn gap_or_none(cost: Option<f64>, best: Option<f64>) -> Option<f64> {
    match (cost, best) {
        (None, _) => Some(100.0),
        (Some(c), Some(b)) => compute_gap(Some(c), b).ok(),
        (Some(_), None) => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub count: usize,
    pub temperature: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            count: DEFAULT_SAMPLE_COUNT,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainTag,
    pub n: usize,
    /// Generated instances, one per seed.
    pub seeds: Vec<u64>,
    /// Instance files or fixture names.
    pub instances: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    pub guidance: Vec<GuidanceKind>,
    /// Q-network weights for `dqn` guidance.
    pub dqn_weights: Option<PathBuf>,
    /// Policy-network weights for `ppo` guidance.
    pub ppo_weights: Option<PathBuf>,
    pub max_expansions: Option<u64>,
    pub time_limit_secs: Option<f64>,
    /// Reward scaling for value guidance; the domain default when absent.
    pub beta: Option<f64>,
    pub sampling: SamplingConfig,
    /// JSON map from instance id to a known best cost.
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub generator: GeneratorParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: DomainTag::Tsp,
            n: 20,
            seeds: Vec::new(),
            instances: Vec::new(),
            algorithms: vec![Algorithm::Cabs],
            guidance: vec![GuidanceKind::Dual],
            dqn_weights: None,
            ppo_weights: None,
            max_expansions: None,
            time_limit_secs: None,
            beta: None,
            sampling: SamplingConfig::default(),
            reference: None,
            output: None,
            generator: GeneratorParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_expansions: self.max_expansions,
            time_limit: self.time_limit_secs.map(Duration::from_secs_f64),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.seeds.is_empty() && self.instances.is_empty() {
            return bad("no instances: give seeds or instance files".into());
        }
        if self.algorithms.is_empty() || self.guidance.is_empty() {
            return bad("at least one algorithm and one guidance are required".into());
        }
        for (kind, path) in [(GuidanceKind::Dqn, &self.dqn_weights), (GuidanceKind::Ppo, &self.ppo_weights)] {
            if self.guidance.contains(&kind) && path.is_none() {
                return bad(format!("{kind} guidance needs a weight file"));
            }
        }
        if matches!(self.beta, Some(b) if !(b > 0.0)) {
            return bad("beta must be positive".into());
        }
        if matches!(self.time_limit_secs, Some(t) if !(t >= 0.0)) {
            return bad("time limit must be non-negative".into());
        }
        if self.sampling.count == 0 || !(self.sampling.temperature > 0.0) {
            return bad("sampling needs a positive count and temperature".into());
        }
        Ok(())
    }

    /// Instances in config order with their ids.
    pub fn load_instances(&self) -> Result<Vec<(String, Arc<Instance>)>, BenchError> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            let inst = Instance::generate(self.domain, self.n, seed, &self.generator)?;
            out.push((format!("{}-n{}-s{seed}", self.domain, self.n), Arc::new(inst)));
        }
        for spec in &self.instances {
            let inst = resolve_instance(spec)?;
            if inst.tag() != self.domain {
                return Err(BenchError::InvalidConfig(format!(
                    "instance {spec} is {}, the experiment domain is {}",
                    inst.tag(),
                    self.domain
                )));
            }
            out.push((spec.clone(), Arc::new(inst)));
        }
        Ok(out)
    }
}

/// A fixture name or a path to an instance file.
pub fn resolve_instance(spec: &str) -> Result<Instance, BenchError> {
    match Instance::fixture(spec) {
        Ok(inst) => Ok(inst),
        Err(DomainError::UnknownFixture(_)) => Ok(Instance::load(Path::new(spec))?),
        Err(e) => Err(e.into()),
    }
}

fn load_weights(path: &Path, domain: DomainTag) -> Result<Arc<crate::learning::network::NetworkParams>, BenchError> {
    let params = load_params(path).map_err(|source| BenchError::Weights {
        path: path.to_owned(),
        source,
    })?;
    if params.domain != domain {
        return Err(BenchError::WeightDomainMismatch {
            path: path.to_owned(),
            found: params.domain,
            expected: domain,
        });
    }
    Ok(Arc::new(params))
}

/// Builds the evaluator for `kind` on one instance.
pub fn build_guidance(
    kind: GuidanceKind,
    instance: &Arc<Instance>,
    model: &Arc<Model>,
    weights: Option<&Path>,
    beta: Option<f64>,
) -> Result<Guidance, BenchError> {
    let need = || weights.ok_or_else(|| BenchError::InvalidConfig(format!("{kind} guidance needs a weight file")));
    Ok(match kind {
        GuidanceKind::Dual => Guidance::DualBound,
        GuidanceKind::Zero => Guidance::ZeroH,
        GuidanceKind::Greedy => Guidance::greedy(Arc::clone(instance)),
        GuidanceKind::Dqn => Guidance::value_net(
            load_weights(need()?, instance.tag())?,
            Arc::clone(instance),
            Arc::clone(model),
            beta.unwrap_or_else(|| instance.tag().default_beta()),
        )?,
        GuidanceKind::Ppo => {
            Guidance::policy_net(load_weights(need()?, instance.tag())?, Arc::clone(instance), Arc::clone(model))?
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    /// `<algorithm>-<guidance>`.
    pub method: String,
    pub trace: Vec<(u64, f64)>,
    pub final_cost: Option<f64>,
    pub proved_optimal: bool,
    pub wall_ms: f64,
    pub expansions: u64,
    pub generated: u64,
    /// Gap to the batch best; absent when that best is 0.
    pub gap: Option<f64>,
}

pub fn method_id(algorithm: Algorithm, guidance: GuidanceKind) -> String {
    format!("{algorithm}-{guidance}")
}

fn load_reference(path: &Path) -> Result<HashMap<String, f64>, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| BenchError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Runs every instance with every algorithm and guidance, then fills in
/// gaps against the best cost per instance.
pub fn run_search_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>, BenchError> {
    config.validate()?;
    let reference = match &config.reference {
        Some(p) => load_reference(p)?,
        None => HashMap::new(),
    };
    let mut records = Vec::new();
    let mut direction_of = HashMap::new();
    for (id, instance) in config.load_instances()? {
        let model = Arc::new(instance.build_model()?);
        direction_of.insert(id.clone(), model.direction());
        for &kind in &config.guidance {
            let weights = match kind {
                GuidanceKind::Dqn => config.dqn_weights.as_deref(),
                GuidanceKind::Ppo => config.ppo_weights.as_deref(),
                _ => None,
            };
            let guidance = build_guidance(kind, &instance, &model, weights, config.beta)?;
            for &algorithm in &config.algorithms {
                let start = Instant::now();
                let result = solve(algorithm, &model, &guidance, config.limits(), SearchOptions::default())?;
                records.push(RunRecord {
                    instance: id.clone(),
                    method: method_id(algorithm, kind),
                    trace: result.anytime_trace.clone(),
                    final_cost: result.cost(),
                    proved_optimal: result.proved_optimal,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    expansions: result.expansions,
                    generated: result.generated,
                    gap: None,
                });
            }
        }
    }
    let best = batch_best(&records, &direction_of, &reference);
    for r in &mut records {
        r.gap = gap_or_none(r.final_cost, best.get(&r.instance).copied());
    }
    Ok(records)
}

/// Best final cost per instance over the records and the reference values.
pub fn batch_best(
    records: &[RunRecord],
    direction_of: &HashMap<String, Direction>,
    reference: &HashMap<String, f64>,
) -> BTreeMap<String, f64> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    let candidates = records
        .iter()
        .filter_map(|r| r.final_cost.map(|c| (&r.instance, c)))
        .chain(reference.iter().map(|(k, &v)| (k, v)));
    for (id, cost) in candidates {
        let dir = direction_of.get(id).copied().unwrap_or(Direction::Minimize);
        best.entry(id.clone())
            .and_modify(|b| *b = dir.best(*b, cost))
            .or_insert(cost);
    }
    best
}

/// Outcome of [`sample_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub best: Option<f64>,
    pub best_sequence: Option<Vec<TransitionId>>,
    pub feasible: usize,
    pub samples: usize,
}

/// Independent rollouts choosing successors with probability proportional
/// to `softmax(-h / temperature)` (`+h` when maximizing). Only rollouts that
/// reach a base state as valid solutions count as feasible.
pub fn sample_solve(
    model: &Model,
    evaluator: &dyn Evaluator,
    count: usize,
    temperature: f64,
    seed: u64,
) -> Result<SampleOutcome, BenchError> {
    if count == 0 || !(temperature > 0.0) {
        return Err(BenchError::InvalidConfig("sampling needs a positive count and temperature".into()));
    }
    let direction = model.direction();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampleOutcome {
        best: None,
        best_sequence: None,
        feasible: 0,
        samples: count,
    };
    let cap = crate::guidance::rollout_cap(model);
    for _ in 0..count {
        let mut state: State = model.target().clone();
        let mut g = 0.0;
        let mut pi_acc = 1.0;
        let mut sequence = Vec::new();
        while !model.is_base(&state) && sequence.len() <= cap {
            let mut children: Vec<Child> = model
                .applicable_unchecked(&state)
                .into_iter()
                .map(|id| {
                    let next = model.successor_unchecked(&state, id);
                    let child_g = saturating_add(g, model.cost_unchecked(&state, id));
                    let eta = model.dual_bound(&next);
                    Child::new(next, id, child_g, eta)
                })
                .collect();
            if children.is_empty() {
                break;
            }
            evaluator.evaluate(model, ParentView { state: &state, g, pi_acc }, &mut children)?;
            let logits: Vec<f64> = children
                .iter()
                .map(|c| match direction {
                    Direction::Minimize => -c.h,
                    Direction::Maximize => c.h,
                })
                .collect();
            let mask: Vec<bool> = logits.iter().map(|l| *l > f64::NEG_INFINITY).collect();
            let probs = if mask.iter().any(|&m| m) {
                masked_softmax(&logits, &mask, temperature)
            } else {
                vec![1.0; logits.len()]
            };
            let pick = WeightedIndex::new(&probs)
                .map(|d| d.sample(&mut rng))
                .unwrap_or(0);
            let chosen = children.swap_remove(pick);
            sequence.push(chosen.transition);
            g = chosen.g;
            pi_acc = chosen.pi_acc;
            state = chosen.state;
        }
        if let Ok(cost) = model.solution_cost(&sequence) {
            out.feasible += 1;
            if out.best.is_none_or(|b| direction.is_better(cost, b)) {
                out.best = Some(cost);
                out.best_sequence = Some(sequence);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct ResultsFile {
    version: u32,
    records: Vec<RunRecord>,
}

/// Sorts records by instance and method for reproducible output.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| (&a.instance, &a.method).cmp(&(&b.instance, &b.method)));
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one `final` row per record and one `trace` row per
/// improvement; trace gaps are taken against the record's final gap basis.
pub fn records_to_csv(records: &[RunRecord]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema",
        "row",
        "instance",
        "method",
        "expansions",
        "cost",
        "gap",
        "proved_optimal",
        "wall_ms",
    ])?;
    let version = RESULTS_SCHEMA_VERSION.to_string();
    for r in records {
        let best = best_from_gap(r);
        w.write_record([
            version.as_str(),
            "final",
            &r.instance,
            &r.method,
            &r.expansions.to_string(),
            &fmt_opt(r.final_cost),
            &fmt_opt(r.gap),
            &r.proved_optimal.to_string(),
            &format!("{:.3}", r.wall_ms),
        ])?;
        for &(expansions, cost) in &r.trace {
            let gap = best.and_then(|b| compute_gap(Some(cost), b).ok());
            w.write_record([
                version.as_str(),
                "trace",
                &r.instance,
                &r.method,
                &expansions.to_string(),
                &cost.to_string(),
                &fmt_opt(gap),
                "",
                "",
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Recovers the batch best from a record's final cost and gap.
fn best_from_gap(r: &RunRecord) -> Option<f64> {
    let (cost, gap) = (r.final_cost?, r.gap?);
    if gap == 0.0 {
        Some(cost)
    } else {
        None
    }
}

pub fn records_to_json(records: &[RunRecord]) -> String {
    serde_json::to_string_pretty(&ResultsFile {
        version: RESULTS_SCHEMA_VERSION,
        records: records.to_vec(),
    })
    .expect("records always serialize")
}

pub fn records_from_json(text: &str) -> Result<Vec<RunRecord>, BenchError> {
    let file: ResultsFile = serde_json::from_str(text).map_err(|e| BenchError::Parse {
        path: PathBuf::from("<results>"),
        message: e.to_string(),
    })?;
    if file.version != RESULTS_SCHEMA_VERSION {
        return Err(BenchError::Parse {
            path: PathBuf::from("<results>"),
            message: format!("unsupported results version {}", file.version),
        });
    }
    Ok(file.records)
}

pub fn export_results(records: &[RunRecord], path: &Path, format: ExportFormat) -> Result<(), BenchError> {
    if records.is_empty() {
        return Err(BenchError::InvalidConfig("no records to export".into()));
    }
    let text = match format {
        ExportFormat::Csv => records_to_csv(records)?,
        ExportFormat::Json => records_to_json(records),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| BenchError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_results(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })?;
    records_from_json(&text).map_err(|e| match e {
        BenchError::Parse { message, .. } => BenchError::Parse {
            path: path.to_owned(),
            message,
        },
        other => other,
    })
}

/// Best cost a run had found within `budget` expansions.
pub fn cost_at(trace: &[(u64, f64)], budget: u64) -> Option<f64> {
    trace.iter().take_while(|(e, _)| *e <= budget).last().map(|t| t.1)
}

/// Expansion budgets 1, 10, 100, ... up to and including `max`.
pub fn budgets_up_to(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut b = 1u64;
    while b <= max {
        out.push(b);
        match b.checked_mul(10) {
            Some(next) => b = next,
            None => break,
        }
    }
    if out.last() != Some(&max) && max > 0 {
        out.push(max);
    }
    out
}

/// Plain-text summary: per method, mean final gap, optimality proofs and
/// mean gap at growing expansion budgets. Wall time is left out so the
/// report depends only on the search outcomes.
pub fn report(records: &[RunRecord]) -> String {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        if let (Some(c), Some(g)) = (r.final_cost, r.gap) {
            if g == 0.0 {
                best.insert(&r.instance, c);
            }
        }
    }
    let max_exp = records.iter().map(|r| r.expansions).max().unwrap_or(0);
    let budgets = budgets_up_to(max_exp);
    let mut by_method: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(&r.method).or_default().push(r);
    }
    let mut out = String::new();
    let _ = write!(out, "{:<16} {:>5} {:>9} {:>7} {:>12}", "method", "runs", "mean_gap", "proved", "expansions");
    for b in &budgets {
        let _ = write!(out, " {:>10}", format!("gap@{b}"));
    }
    out.push('\n');
    for (method, rs) in by_method {
        let gaps: Vec<f64> = rs.iter().filter_map(|r| r.gap).collect();
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let proved = rs.iter().filter(|r| r.proved_optimal).count();
        let expansions = rs.iter().map(|r| r.expansions as f64).sum::<f64>() / rs.len() as f64;
        let _ = write!(out, "{method:<16} {:>5} {:>9.3} {:>7} {:>12.1}", rs.len(), mean(&gaps), proved, expansions);
        for &b in &budgets {
            let at: Vec<f64> = rs
                .iter()
                .filter_map(|r| gap_or_none(cost_at(&r.trace, b), best.get(r.instance.as_str()).copied()))
                .collect();
            let _ = write!(out, " {:>10.3}", mean(&at));
        }
        out.push('\n');
    }
    out
}

/// Default directory for result files.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}
