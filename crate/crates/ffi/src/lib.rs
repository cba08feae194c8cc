//! C interface to the didp-rl solver.
//!
//! Every function returns a [`DidpStatus`]; on failure a message is available
//! from [`didp_last_error`] until the next call on the same thread. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use didp_rl::bench::{build_guidance, compute_gap, resolve_instance};
use didp_rl::domains::{DomainTag, GeneratorParams, Instance};
use didp_rl::guidance::GuidanceKind;
use didp_rl::learning::io::save_params;
use didp_rl::learning::train::{train_dqn, train_ppo, Algorithm as TrainAlgorithm, InstanceSource, TrainConfig};
use didp_rl::model::Model;
use didp_rl::search::{solve, Algorithm, Limits, SearchOptions, SolveResult};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DidpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InstanceError = 3,
    SearchError = 4,
    TrainError = 5,
    IoError = 6,
    Panic = 7,
}

/// A problem instance together with its compiled model.
pub struct DidpInstance {
    instance: Arc<Instance>,
    model: Arc<Model>,
}

/// Outcome of a search.
pub struct DidpResult {
    result: SolveResult,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DidpStatus, String);

impl Failure {
    fn new(status: DidpStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording failures and panics as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DidpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DidpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DidpStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(DidpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(DidpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

fn parse<T>(s: &str) -> Result<T, Failure>
where
    T: std::str::FromStr,
    T::Err: ToString,
{
    s.parse().map_err(|e| Failure::new(DidpStatus::InvalidArgument, e))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(DidpStatus::NullPointer, format!("{what} is null")))
}

fn wrap(instance: Instance) -> Result<*mut DidpInstance, Failure> {
    let model = instance
        .build_model()
        .map_err(|e| Failure::new(DidpStatus::InstanceError, e))?;
    Ok(Box::into_raw(Box::new(DidpInstance {
        instance: Arc::new(instance),
        model: Arc::new(model),
    })))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn didp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a random instance of `domain` ("tsp", "tsptw", "knapsack" or
/// "portfolio").
///
/// # Safety
/// `domain` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_instance_generate(
    domain: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut DidpInstance,
) -> DidpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let tag: DomainTag = parse(text(domain, "domain")?)?;
        let inst = Instance::generate(tag, n, seed, &GeneratorParams::default())
            .map_err(|e| Failure::new(DidpStatus::InvalidArgument, e))?;
        *out = wrap(inst)?;
        Ok(())
    })
}

/// Loads a named fixture ("fix-tsp3", ...) or an instance file.
///
/// # Safety
/// `spec` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_instance_load(spec: *const c_char, out: *mut *mut DidpInstance) -> DidpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inst = resolve_instance(text(spec, "spec")?).map_err(|e| Failure::new(DidpStatus::InstanceError, e))?;
        *out = wrap(inst)?;
        Ok(())
    })
}

/// Parses an instance from its JSON text.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_instance_from_json(json: *const c_char, out: *mut *mut DidpInstance) -> DidpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inst = Instance::from_json(text(json, "json")?).map_err(|e| Failure::new(DidpStatus::InstanceError, e))?;
        *out = wrap(inst)?;
        Ok(())
    })
}

/// Number of customers (including the depot) or items.
///
/// # Safety
/// `instance` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn didp_instance_size(instance: *const DidpInstance, out: *mut usize) -> DidpStatus {
    guard(|| {
        let inst = instance
            .as_ref()
            .ok_or_else(|| Failure::new(DidpStatus::NullPointer, "instance is null"))?;
        *out_ptr(out, "out")? = inst.instance.n();
        Ok(())
    })
}

/// # Safety
/// `instance` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn didp_instance_free(instance: *mut DidpInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Runs `algorithm` ("cabs", "acps", "apps") with `guidance` ("dual",
/// "zero", "greedy", "dqn", "ppo"). `weights` is required for learned
/// guidance and ignored otherwise. `max_expansions` of 0 and a
/// non-positive `time_limit_secs` mean unlimited.
///
/// # Safety
/// String arguments must be valid C strings (`weights` may be null),
/// `instance` a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_solve(
    instance: *const DidpInstance,
    algorithm: *const c_char,
    guidance: *const c_char,
    weights: *const c_char,
    max_expansions: u64,
    time_limit_secs: f64,
    out: *mut *mut DidpResult,
) -> DidpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inst = instance
            .as_ref()
            .ok_or_else(|| Failure::new(DidpStatus::NullPointer, "instance is null"))?;
        let algo: Algorithm = parse(text(algorithm, "algorithm")?)?;
        let kind: GuidanceKind = parse(text(guidance, "guidance")?)?;
        let weights = optional_text(weights, "weights")?.map(Path::new);
        let eval = build_guidance(kind, &inst.instance, &inst.model, weights, None)
            .map_err(|e| Failure::new(DidpStatus::InvalidArgument, e))?;
        let limits = Limits {
            max_expansions: (max_expansions > 0).then_some(max_expansions),
            time_limit: (time_limit_secs > 0.0).then(|| std::time::Duration::from_secs_f64(time_limit_secs)),
        };
        let result = solve(algo, &inst.model, &eval, limits, SearchOptions::default())
            .map_err(|e| Failure::new(DidpStatus::SearchError, e))?;
        let labels = result
            .best
            .iter()
            .flat_map(|b| &b.sequence)
            .map(|&t| CString::new(inst.model.transition_label(t)).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(DidpResult { result, labels }));
        Ok(())
    })
}

unsafe fn result_ref<'a>(result: *const DidpResult) -> Result<&'a DidpResult, Failure> {
    result.as_ref().ok_or_else(|| Failure::new(DidpStatus::NullPointer, "result is null"))
}

/// Cost of the best solution. `has_solution` is set to 0 (and `cost` left
/// untouched) when none was found.
///
/// # Safety
/// `result` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn didp_result_cost(result: *const DidpResult, has_solution: *mut i32, cost: *mut f64) -> DidpStatus {
    guard(|| {
        let r = result_ref(result)?;
        let has = out_ptr(has_solution, "has_solution")?;
        let cost = out_ptr(cost, "cost")?;
        match r.result.cost() {
            Some(c) => {
                *has = 1;
                *cost = c;
            }
            None => *has = 0,
        }
        Ok(())
    })
}

/// Search statistics. Any output pointer may be null.
///
/// # Safety
/// `result` must be a live handle; non-null output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn didp_result_stats(
    result: *const DidpResult,
    proved_optimal: *mut i32,
    expansions: *mut u64,
    generated: *mut u64,
) -> DidpStatus {
    guard(|| {
        let r = &result_ref(result)?.result;
        if let Some(p) = proved_optimal.as_mut() {
            *p = r.proved_optimal as i32;
        }
        if let Some(e) = expansions.as_mut() {
            *e = r.expansions;
        }
        if let Some(g) = generated.as_mut() {
            *g = r.generated;
        }
        Ok(())
    })
}

/// Number of transitions in the best solution (0 if none).
///
/// # Safety
/// `result` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_result_solution_len(result: *const DidpResult, len: *mut usize) -> DidpStatus {
    guard(|| {
        *out_ptr(len, "len")? = result_ref(result)?.labels.len();
        Ok(())
    })
}

/// Label of the `index`-th transition, e.g. "visit 2". The string is owned by
/// the result handle.
///
/// # Safety
/// `result` must be a live handle and `label` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_result_solution_label(
    result: *const DidpResult,
    index: usize,
    label: *mut *const c_char,
) -> DidpStatus {
    guard(|| {
        let r = result_ref(result)?;
        let out = out_ptr(label, "label")?;
        let l = r.labels.get(index).ok_or_else(|| {
            Failure::new(DidpStatus::InvalidArgument, format!("index {index} out of range for {} steps", r.labels.len()))
        })?;
        *out = l.as_ptr();
        Ok(())
    })
}

/// Number of points in the anytime trace.
///
/// # Safety
/// `result` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_result_trace_len(result: *const DidpResult, len: *mut usize) -> DidpStatus {
    guard(|| {
        *out_ptr(len, "len")? = result_ref(result)?.result.anytime_trace.len();
        Ok(())
    })
}

/// The `index`-th improvement: expansions so far and the new cost.
///
/// # Safety
/// `result` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn didp_result_trace_point(
    result: *const DidpResult,
    index: usize,
    expansions: *mut u64,
    cost: *mut f64,
) -> DidpStatus {
    guard(|| {
        let trace = &result_ref(result)?.result.anytime_trace;
        let &(e, c) = trace.get(index).ok_or_else(|| {
            Failure::new(DidpStatus::InvalidArgument, format!("index {index} out of range for {} points", trace.len()))
        })?;
        *out_ptr(expansions, "expansions")? = e;
        *out_ptr(cost, "cost")? = c;
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn didp_result_free(result: *mut DidpResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Trains a network ("dqn" or "ppo") on random instances of `domain` with
/// the default settings for size `n`, or on `instance` when non-null, and
/// writes the weights to `out_path`. PPO also writes the critic to
/// `<out_path>.critic`. `episodes` of 0 keeps the default.
///
/// # Safety
/// String arguments must be valid C strings; `instance` may be null.
#[no_mangle]
pub unsafe extern "C" fn didp_train(
    domain: *const c_char,
    n: usize,
    instance: *const DidpInstance,
    algorithm: *const c_char,
    episodes: usize,
    seed: u64,
    out_path: *const c_char,
) -> DidpStatus {
    guard(|| {
        let tag: DomainTag = parse(text(domain, "domain")?)?;
        let algo: TrainAlgorithm = parse(text(algorithm, "algorithm")?)?;
        let path = Path::new(text(out_path, "out_path")?);
        let source = match instance.as_ref() {
            Some(inst) if inst.instance.tag() != tag => {
                return Err(Failure::new(
                    DidpStatus::InvalidArgument,
                    format!("instance is {}, not {tag}", inst.instance.tag()),
                ))
            }
            Some(inst) => InstanceSource::Fixed(Arc::clone(&inst.instance)),
            None => InstanceSource::Random {
                domain: tag,
                n,
                params: GeneratorParams::default(),
            },
        };
        let mut config = TrainConfig::for_domain(tag, algo, n);
        config.seed = seed;
        if episodes > 0 {
            config.episodes = episodes;
        }
        let train_err = |e: didp_rl::learning::train::TrainError| Failure::new(DidpStatus::TrainError, e);
        let io_err = |e: didp_rl::learning::io::WeightFileError| Failure::new(DidpStatus::IoError, e);
        match algo {
            TrainAlgorithm::Dqn => {
                let out = train_dqn(&source, &config).map_err(train_err)?;
                save_params(&out.params, path).map_err(io_err)?;
            }
            TrainAlgorithm::Ppo => {
                let out = train_ppo(&source, &config).map_err(train_err)?;
                save_params(&out.actor, path).map_err(io_err)?;
                let mut critic = path.as_os_str().to_owned();
                critic.push(".critic");
                save_params(&out.critic, Path::new(&critic)).map_err(io_err)?;
            }
        }
        Ok(())
    })
}

/// Percentage gap of `cost` to `best`; pass `has_cost = 0` for a missing
/// solution (gap 100).
///
/// # Safety
/// `gap` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn didp_compute_gap(has_cost: i32, cost: f64, best: f64, gap: *mut f64) -> DidpStatus {
    guard(|| {
        let out = out_ptr(gap, "gap")?;
        *out = compute_gap((has_cost != 0).then_some(cost), best)
            .map_err(|e| Failure::new(DidpStatus::InvalidArgument, e))?;
        Ok(())
    })
}
