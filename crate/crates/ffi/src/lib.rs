//! C interface over `bfpred`.
//!
//! Every call returns a [`BfpredStatus`]. On failure the message is available
//! from [`bfpred_last_error`] on the same thread. Strings handed out by the
//! library are owned by the caller and released with [`bfpred_string_free`];
//! handles are released with their matching `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bfpred::audit::{audit_truthfulness, estimate_ratio, trial_seeds, AuditConfig};
use bfpred::bounds::preset;
use bfpred::experiment::{parse_epsilon, run_experiment, ExperimentConfig, InstanceSource};
use bfpred::instance::{parse_instance, render_instance, sample_arrival, Instance, Prediction};
use bfpred::lowerbound::max_expected_ratio;
use bfpred::mechanism::{CoinTranscript, MechParams, MechanismId};
use bfpred::num::{hp, hp_to_f64, parse_q, render_q, Q};
use bfpred::offline::brute_force_opt;
use bfpred::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfpredStatus {
    Ok = 0,
    /// Null pointer or non-UTF-8 string.
    InvalidArgument = 1,
    Parse = 2,
    Domain = 3,
    Config = 4,
    /// Work the library declines, such as oversized exhaustive searches.
    Refused = 5,
    /// An internal contract failed; indicates a library bug.
    Contract = 6,
    Panic = 7,
}

/// A problem instance, optionally with an attached prediction.
pub struct BfpredInstance {
    inst: Instance,
    prediction: Option<Prediction>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(BfpredStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse(_) => BfpredStatus::Parse,
            Error::Domain(_) | Error::DegenerateThreshold(_) => BfpredStatus::Domain,
            Error::Config(_) => BfpredStatus::Config,
            Error::Refused(_) => BfpredStatus::Refused,
            Error::Contract(_) | Error::Characterization(_) => BfpredStatus::Contract,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(BfpredStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BfpredStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BfpredStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside bfpred".into());
            BfpredStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a>(p: *const BfpredInstance) -> Result<&'a BfpredInstance, Failure> {
    p.as_ref().ok_or_else(|| invalid("instance is null"))
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(v);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("string contains NUL"))?;
    put(out, c.into_raw())
}

fn mechanism(name: &str) -> Result<MechanismId, Failure> {
    Ok(name.parse()?)
}

/// `ω` from an explicit prediction, or from `ε` against the exact optimum.
fn omega_for(
    m: MechanismId,
    h: &BfpredInstance,
    epsilon: Option<&str>,
) -> Result<Option<Q>, Failure> {
    if !m.needs_prediction() {
        return Ok(None);
    }
    if let Some(e) = epsilon {
        let e = parse_epsilon(e)?;
        let opt = brute_force_opt(h.inst.market(), None)?.value;
        return Ok(Some((Q::from_integer(1.into()) - e) * opt));
    }
    match &h.prediction {
        Some(p) => Ok(Some(p.omega.clone())),
        None => Err(invalid(format!(
            "{m} needs a prediction: pass epsilon or attach omega to the instance"
        ))),
    }
}

/// Library version as a static string; never free it.
#[no_mangle]
pub extern "C" fn bfpred_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread; never free it.
#[no_mangle]
pub extern "C" fn bfpred_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn bfpred_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an instance document (JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_instance_parse(
    json: *const c_char,
    out: *mut *mut BfpredInstance,
) -> BfpredStatus {
    guard(|| {
        let (inst, prediction) = parse_instance(text(json, "json")?)?;
        put(
            out,
            Box::into_raw(Box::new(BfpredInstance { inst, prediction })),
        )
    })
}

/// Draws an instance of `family` (`additive`, `coverage` or `cut`) with
/// costs uniform on `(0, budget/2]`.
///
/// # Safety
/// `family` and `budget` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_instance_generate(
    family: *const c_char,
    n: usize,
    budget: *const c_char,
    seed: u64,
    out: *mut *mut BfpredInstance,
) -> BfpredStatus {
    guard(|| {
        let budget = parse_q(text(budget, "budget")?)?;
        let (inst, prediction) =
            InstanceSource::generated(text(family, "family")?, n, budget, seed)?.load()?;
        put(
            out,
            Box::into_raw(Box::new(BfpredInstance { inst, prediction })),
        )
    })
}

/// # Safety
/// `inst` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bfpred_instance_free(inst: *mut BfpredInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_instance_agents(
    inst: *const BfpredInstance,
    out: *mut usize,
) -> BfpredStatus {
    guard(|| put(out, handle(inst)?.inst.n()))
}

/// Canonical document for the instance, including any prediction.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_instance_render(
    inst: *const BfpredInstance,
    out: *mut *mut c_char,
) -> BfpredStatus {
    guard(|| {
        let h = handle(inst)?;
        put_string(out, render_instance(&h.inst, h.prediction.as_ref()))
    })
}

/// Exact offline optimum as a rational string `p/q`.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_instance_optimum(
    inst: *const BfpredInstance,
    out: *mut *mut c_char,
) -> BfpredStatus {
    guard(|| {
        let opt = brute_force_opt(handle(inst)?.inst.market(), None)?;
        put_string(out, render_q(&opt.value))
    })
}

/// Runs one mechanism once under truthful bids and writes the outcome as JSON.
///
/// `epsilon` may be null, in which case prediction mechanisms use the
/// instance's attached prediction.
///
/// # Safety
/// `inst` must be a live handle; string arguments NUL-terminated or null where
/// allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_run_once(
    inst: *const BfpredInstance,
    mechanism: *const c_char,
    epsilon: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> BfpredStatus {
    guard(|| {
        let h = handle(inst)?;
        let m = self::mechanism(text(mechanism, "mechanism")?)?;
        let omega = omega_for(m, h, opt_text(epsilon, "epsilon")?)?;
        let (os, ts) = trial_seeds(seed, 0);
        let order = sample_arrival(h.inst.n(), os)?;
        let outcome = m.run_instance(
            &h.inst,
            omega.as_ref(),
            &order,
            CoinTranscript::from_seed(ts),
            &MechParams::default(),
        )?;
        let json = serde_json::to_string(&outcome).map_err(|e| invalid(e.to_string()))?;
        put_string(out, json)
    })
}

/// Monte Carlo mean of `v(S)/OPT` and its standard error.
///
/// # Safety
/// As for [`bfpred_run_once`]; `mean` and `std_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_estimate_ratio(
    inst: *const BfpredInstance,
    mechanism: *const c_char,
    epsilon: *const c_char,
    trials: usize,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> BfpredStatus {
    guard(|| {
        let h = handle(inst)?;
        let m = self::mechanism(text(mechanism, "mechanism")?)?;
        let omega = omega_for(m, h, opt_text(epsilon, "epsilon")?)?;
        let est = estimate_ratio(
            m,
            &h.inst,
            omega.as_ref(),
            &MechParams::default(),
            trials,
            seed,
        )?;
        put(mean, est.mean_ratio)?;
        put(std_error, est.std_error)
    })
}

/// Exhaustive-order truthfulness, budget and IR audit with default settings.
/// `passed` receives 1 or 0; `violations` the total number of findings.
///
/// # Safety
/// As for [`bfpred_run_once`]; `passed` and `violations` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_audit(
    inst: *const BfpredInstance,
    mechanism: *const c_char,
    epsilon: *const c_char,
    passed: *mut i32,
    violations: *mut usize,
) -> BfpredStatus {
    guard(|| {
        let h = handle(inst)?;
        let m = self::mechanism(text(mechanism, "mechanism")?)?;
        let omega = omega_for(m, h, opt_text(epsilon, "epsilon")?)?;
        let r = audit_truthfulness(&h.inst, &AuditConfig::new(m, MechParams::default(), omega))?;
        put(passed, r.passed as i32)?;
        put(
            violations,
            r.violations.len() + r.budget_violations.len() + r.ir_violations.len(),
        )
    })
}

/// Evaluates bound `index` of a named preset at `epsilon`.
///
/// # Safety
/// `preset_name` and `epsilon` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_bound_eval(
    preset_name: *const c_char,
    index: usize,
    epsilon: *const c_char,
    out: *mut f64,
) -> BfpredStatus {
    guard(|| {
        let specs = preset(text(preset_name, "preset")?)?;
        let spec = specs
            .get(index)
            .ok_or_else(|| invalid(format!("preset has {} bounds", specs.len())))?;
        let report = spec.eval(&hp(text(epsilon, "epsilon")?)?)?;
        put(out, hp_to_f64(&report.bound))
    })
}

/// Best expected ratio of a deterministic two-agent mechanism on the hard
/// distribution with `k` grid steps, as an exact string.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_lowerbound(k: usize, out: *mut *mut c_char) -> BfpredStatus {
    guard(|| {
        let r = max_expected_ratio(k, Q::from_integer(1.into()))?;
        put_string(out, render_q(&r.max_expected_ratio))
    })
}

/// Runs an experiment config (the JSON the CLI's `exec` accepts) and returns
/// its summary document. `exit_code` receives 0, or 1 when violations were found.
///
/// # Safety
/// `config_json` must be NUL-terminated; `summary` and `exit_code` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfpred_experiment_run(
    config_json: *const c_char,
    summary: *mut *mut c_char,
    exit_code: *mut i32,
) -> BfpredStatus {
    guard(|| {
        let cfg: ExperimentConfig = serde_json::from_str(text(config_json, "config")?)
            .map_err(|e| Failure(BfpredStatus::Parse, e.to_string()))?;
        let out = run_experiment(&cfg)?;
        put(exit_code, out.exit_code())?;
        put_string(summary, out.summary.to_string())
    })
}
