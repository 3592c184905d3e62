//! C interface to `jmdp`.
//!
//! Objects are opaque handles created by `jmdp_*_new`/`jmdp_*_from_*` functions
//! and released with the matching `*_free`. Every fallible call returns a
//! [`JmdpStatus`]; on failure, [`jmdp_last_error_message`] retrieves a message
//! for the calling thread. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use jmdp::dp::jipe2;
use jmdp::env::{build_crc, build_wgw, env_from_json, policy_from_json, ExoJmdp, Policy};
use jmdp::moments::MomentCollection2;
use jmdp::stats::{cantelli_bound, gap_stats};
use jmdp::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JmdpStatus {
    Ok = 0,
    InvalidInput = 1,
    InvalidQuery = 2,
    InvalidConfig = 3,
    Schema = 4,
    InvalidFeatures = 5,
    AssumptionViolated = 6,
    NotApplicable = 7,
    SizeLimit = 8,
    Io = 9,
    NullPointer = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Environment handle.
pub struct JmdpEnv {
    inner: ExoJmdp,
}

/// Policy handle.
pub struct JmdpPolicy {
    inner: Policy,
}

/// Second-order moment collection handle.
pub struct JmdpMoments {
    inner: MomentCollection2,
}

/// Summary of a fixed-point run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct JmdpJipeInfo {
    pub iterations: usize,
    /// 1 when the residual certificate was reached.
    pub certified: i32,
    pub certified_error_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> JmdpStatus {
    match e {
        Error::InvalidInput(_) => JmdpStatus::InvalidInput,
        Error::InvalidQuery(_) => JmdpStatus::InvalidQuery,
        Error::InvalidConfig { .. } => JmdpStatus::InvalidConfig,
        Error::Schema { .. } | Error::Json(_) | Error::Csv(_) => JmdpStatus::Schema,
        Error::InvalidFeatures(_) => JmdpStatus::InvalidFeatures,
        Error::AssumptionViolated(_) => JmdpStatus::AssumptionViolated,
        Error::NotApplicable(_) => JmdpStatus::NotApplicable,
        Error::SizeLimit(_) => JmdpStatus::SizeLimit,
        Error::Io { .. } => JmdpStatus::Io,
    }
}

struct Fail(JmdpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(JmdpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> JmdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JmdpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            JmdpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(JmdpStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn jmdp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn jmdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses an environment document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_env_from_json(json: *const c_char, out: *mut *mut JmdpEnv) -> JmdpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        put(out, JmdpEnv { inner: env_from_json(text)? })
    })
}

/// Coupled-reward chain with `num_states` states.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_env_crc(num_states: usize, gamma: f64, out: *mut *mut JmdpEnv) -> JmdpStatus {
    guard(|| put(out, JmdpEnv { inner: build_crc(num_states, gamma)? }))
}

/// Windy gridworld with the goal at `(goal_col, goal_row)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_env_wgw(
    width: usize,
    height: usize,
    goal_col: usize,
    goal_row: usize,
    p_wind: f64,
    gamma: f64,
    out: *mut *mut JmdpEnv,
) -> JmdpStatus {
    guard(|| {
        put(
            out,
            JmdpEnv {
                inner: build_wgw(width, height, (goal_col, goal_row), p_wind, gamma)?,
            },
        )
    })
}

/// # Safety
/// `env` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn jmdp_env_free(env: *mut JmdpEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jmdp_env_num_states(env: *const JmdpEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.num_states())
}

/// Number of actions, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jmdp_env_num_actions(env: *const JmdpEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.num_actions())
}

/// Uniform policy over the environment's actions.
///
/// # Safety
/// `env` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_policy_uniform(env: *const JmdpEnv, out: *mut *mut JmdpPolicy) -> JmdpStatus {
    guard(|| {
        let env = ref_arg(env, "env")?;
        put(out, JmdpPolicy { inner: Policy::uniform(env.inner.space()) })
    })
}

/// Parses a policy document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_policy_from_json(json: *const c_char, out: *mut *mut JmdpPolicy) -> JmdpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        put(out, JmdpPolicy { inner: policy_from_json(text)? })
    })
}

/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jmdp_policy_free(policy: *mut JmdpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Second-order fixed-point iteration from zero. `info` may be null.
///
/// # Safety
/// Handles must be live; `out` must be writable; `info` null or writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_jipe2(
    env: *const JmdpEnv,
    policy: *const JmdpPolicy,
    epsilon: f64,
    max_iter: usize,
    out: *mut *mut JmdpMoments,
    info: *mut JmdpJipeInfo,
) -> JmdpStatus {
    guard(|| {
        let env = ref_arg(env, "env")?;
        let policy = ref_arg(policy, "policy")?;
        let nx = env.inner.space().len();
        let rep = jipe2(&env.inner, &policy.inner, epsilon, max_iter, &MomentCollection2::zeros(nx))?;
        if let Some(i) = info.as_mut() {
            *i = JmdpJipeInfo {
                iterations: rep.iterations,
                certified: rep.certified as i32,
                certified_error_bound: rep.certified_error_bound,
            };
        }
        put(out, JmdpMoments { inner: rep.final_moments })
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jmdp_moments_free(m: *mut JmdpMoments) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of state-action pairs, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jmdp_moments_nx(m: *const JmdpMoments) -> usize {
    m.as_ref().map_or(0, |m| m.inner.nx())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            JmdpStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the first moments (length `nx`) into `buf`.
///
/// # Safety
/// `m` must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn jmdp_moments_mu(m: *const JmdpMoments, buf: *mut f64, len: usize) -> JmdpStatus {
    guard(|| copy_out(ref_arg(m, "moments")?.inner.mu(), buf, len))
}

/// Copies the second moments (row-major, length `nx * nx`) into `buf`.
///
/// # Safety
/// `m` must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn jmdp_moments_sigma(m: *const JmdpMoments, buf: *mut f64, len: usize) -> JmdpStatus {
    guard(|| copy_out(ref_arg(m, "moments")?.inner.sigma(), buf, len))
}

/// Mean and variance of the gap between actions `a` and `b` at state `s`.
///
/// # Safety
/// Handles must be live; `mean` and `variance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_gap_stats(
    m: *const JmdpMoments,
    env: *const JmdpEnv,
    s: usize,
    a: usize,
    b: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> JmdpStatus {
    guard(|| {
        let m = ref_arg(m, "moments")?;
        let env = ref_arg(env, "env")?;
        if mean.is_null() || variance.is_null() {
            return Err(null("output pointer"));
        }
        let g = gap_stats(&m.inner, env.inner.space(), s, a, b)?;
        *mean = g.mean;
        *variance = g.variance;
        Ok(())
    })
}

/// One-sided Chebyshev bound `variance / (variance + mean^2)`; needs `mean > 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jmdp_cantelli_bound(mean: f64, variance: f64, out: *mut f64) -> JmdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = cantelli_bound(mean, variance)?;
        Ok(())
    })
}
