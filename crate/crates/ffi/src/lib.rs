//! C ABI over the laboratory.
//!
//! Objects cross the boundary as opaque handles. Configurations come from
//! [`adpo_config_from_toml`], policies from [`adpo_train`] or
//! [`adpo_policy_load`], and each is released with the matching `*_free`. Every fallible call
//! returns an [`AdpoStatus`]; on failure a description is available from
//! [`adpo_last_error`] on the same thread until the next failing call.
//! Panics are caught at the boundary and reported as
//! [`AdpoStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use adpo_lab::advantage::group_normalize;
use adpo_lab::config::{Config, Preset};
use adpo_lab::evaluation::{auc, average_precision, evaluate, EvalReport};
use adpo_lab::policy::{read_params, write_params, PolicyParams};
use adpo_lab::tasks::Task;
use adpo_lab::trainer::train;
use adpo_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    /// The computation rejected its input (shapes, domains, empty data).
    Domain = 6,
    /// The metric is undefined for this input, e.g. AUC with one class.
    Undefined = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdpoPreset {
    Toy = 0,
    Paper = 1,
}

/// Parsed and validated configuration.
pub struct AdpoConfig {
    inner: Config,
}

/// Policy parameters.
pub struct AdpoPolicy {
    inner: PolicyParams,
}

/// Headline numbers of an evaluation. Absent metrics are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AdpoEvalSummary {
    pub num_queries: u64,
    pub n: u64,
    pub pass_at_1: f64,
    pub majority: f64,
    pub best_of_n: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub ap: f64,
}

impl From<&EvalReport> for AdpoEvalSummary {
    fn from(r: &EvalReport) -> Self {
        AdpoEvalSummary {
            num_queries: r.num_queries as u64,
            n: r.n as u64,
            pass_at_1: r.pass_at_1.accuracy,
            majority: r.majority.accuracy,
            best_of_n: r.best_of_n.accuracy,
            accuracy: r.accuracy,
            auc: r.auc.unwrap_or(f64::NAN),
            ap: r.ap.unwrap_or(f64::NAN),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AdpoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config { .. } => AdpoStatus::Config,
            Error::Io(_) => AdpoStatus::Io,
            Error::Parse(_) | Error::Json(_) => AdpoStatus::Parse,
            _ => AdpoStatus::Domain,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: AdpoStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> AdpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdpoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdpoStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(AdpoStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AdpoStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(AdpoStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(AdpoStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(AdpoStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Description of the last failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn adpo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adpo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn adpo_config_from_toml(
    toml: *const c_char,
    preset: AdpoPreset,
    out: *mut *mut AdpoConfig,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let preset = match preset {
            AdpoPreset::Toy => Preset::Toy,
            AdpoPreset::Paper => Preset::Paper,
        };
        let inner = Config::from_toml_str(text, preset)?;
        *out = Box::into_raw(Box::new(AdpoConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`adpo_config_from_toml`] or be null.
#[no_mangle]
pub unsafe extern "C" fn adpo_config_free(config: *mut AdpoConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Canonical content hash of a configuration as a newly allocated string;
/// release it with [`adpo_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adpo_config_hash(
    config: *const AdpoConfig,
    out: *mut *mut c_char,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ref_arg(config, "config")?;
        let hash = cfg.inner.content_hash()?;
        *out = CString::new(hash).expect("hex has no NUL").into_raw();
        Ok(())
    })
}

/// Trains a policy with the configuration's training settings.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adpo_train(
    config: *const AdpoConfig,
    out: *mut *mut AdpoPolicy,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &ref_arg(config, "config")?.inner;
        let task = Task::new(cfg.task.clone())?;
        let outcome = train(&cfg.train_config(), &task)?;
        *out = Box::into_raw(Box::new(AdpoPolicy {
            inner: outcome.params,
        }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adpo_policy_load(
    path: *const c_char,
    out: *mut *mut AdpoPolicy,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = fs::File::open(Path::new(path)).map_err(Error::from)?;
        let inner = read_params(BufReader::new(file))?;
        *out = Box::into_raw(Box::new(AdpoPolicy { inner }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adpo_policy_save(
    policy: *const AdpoPolicy,
    path: *const c_char,
) -> AdpoStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let path = str_arg(path, "path")?;
        let file = fs::File::create(Path::new(path)).map_err(Error::from)?;
        write_params(&policy.inner, std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// Number of scalar parameters.
///
/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adpo_policy_len(policy: *const AdpoPolicy, out: *mut usize) -> AdpoStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(policy, "policy")?.inner.shape.len();
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn adpo_policy_free(policy: *mut AdpoPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Evaluates `policy` under the configuration's evaluation settings.
/// `verifier` may be null unless the protocol needs one.
///
/// # Safety
/// Handles must be live (or null where allowed) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adpo_evaluate(
    config: *const AdpoConfig,
    policy: *const AdpoPolicy,
    verifier: *const AdpoPolicy,
    out: *mut AdpoEvalSummary,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let report = run_eval(config, policy, verifier)?;
        *out = AdpoEvalSummary::from(&report);
        Ok(())
    })
}

/// Full evaluation report as JSON; release it with [`adpo_string_free`].
///
/// # Safety
/// Handles must be live (or null where allowed) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adpo_evaluate_json(
    config: *const AdpoConfig,
    policy: *const AdpoPolicy,
    verifier: *const AdpoPolicy,
    out: *mut *mut c_char,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let report = run_eval(config, policy, verifier)?;
        let text = serde_json::to_string(&report).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

unsafe fn run_eval(
    config: *const AdpoConfig,
    policy: *const AdpoPolicy,
    verifier: *const AdpoPolicy,
) -> Result<EvalReport, Failure> {
    let cfg = &ref_arg(config, "config")?.inner;
    let policy = ref_arg(policy, "policy")?;
    let verifier = verifier.as_ref().map(|v| &v.inner);
    let task = Task::new(cfg.task.clone())?;
    Ok(evaluate(
        &policy.inner,
        &cfg.eval.eval_config(),
        &task,
        verifier,
    )?)
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn adpo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Group-normalizes `len` rewards into `out` (which may alias `rewards`).
///
/// # Safety
/// `rewards` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn adpo_group_normalize(
    rewards: *const f64,
    len: usize,
    out: *mut f64,
) -> AdpoStatus {
    guard(|| {
        let r = slice_arg(rewards, len, "rewards")?.to_vec();
        if out.is_null() {
            return Err(fail(AdpoStatus::NullPointer, "out is null"));
        }
        let normalized = group_normalize(&r)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&normalized);
        Ok(())
    })
}

unsafe fn metric(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
    f: fn(&[f64], &[bool]) -> Option<f64>,
    name: &str,
) -> AdpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = f64::NAN;
        let s = slice_arg(scores, len, "scores")?;
        let l: Vec<bool> = slice_arg(labels, len, "labels")?
            .iter()
            .map(|&b| b != 0)
            .collect();
        if s.iter().any(|x| !x.is_finite()) {
            return Err(fail(AdpoStatus::InvalidArgument, "scores must be finite"));
        }
        *out = f(s, &l).ok_or_else(|| {
            fail(
                AdpoStatus::Undefined,
                format!("{name} is undefined without the classes it needs"),
            )
        })?;
        Ok(())
    })
}

/// Area under the ROC curve with tied scores counted as one half.
/// Nonzero labels are positives.
///
/// # Safety
/// `scores` and `labels` must each point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn adpo_auc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> AdpoStatus {
    metric(scores, labels, len, out, auc, "AUC")
}

/// Average precision over descending scores.
///
/// # Safety
/// `scores` and `labels` must each point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn adpo_average_precision(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> AdpoStatus {
    metric(scores, labels, len, out, average_precision, "AP")
}
