//! C interface to the slicing environment, the heuristic allocators and
//! trained policies.
//!
//! Every function returns a `ClaraStatus`; on failure the message is
//! available from `clara_last_error_message` on the same thread until the
//! next failing call. Panics are caught at the boundary and reported as
//! `CLARA_STATUS_PANIC`. Handles are owned by the caller and released with
//! the matching `_free` function; passing NULL to `_free` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use clara::baselines::{allocate_in, BaselineKind};
use clara::env::{Action, EnvConfig, SliceWorld, NUM_SLICES};
use clara::harness::{Checkpoint, DeployedPolicy, RunConfig};
use clara::safety::softmax_project;
use clara::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Contract = 4,
    Io = 5,
    Malformed = 6,
    Internal = 7,
    Panic = 8,
}

/// One simulated slot.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ClaraStepResult {
    /// Throughput, kilobits.
    pub reward: f64,
    /// Per-slice dissatisfaction ratio in [0, 1].
    pub dissatisfaction: [f64; 3],
    /// Per-slice mean latency, seconds.
    pub latency: [f64; 3],
    /// User counts after the slot.
    pub next_counts: [u32; 3],
}

/// Simulator instance.
pub struct ClaraEnv {
    world: SliceWorld,
}

/// Heuristic allocator.
pub struct ClaraAllocator {
    kind: BaselineKind,
}

/// Trained policy loaded from a checkpoint, with its safety layer.
pub struct ClaraPolicy {
    inner: DeployedPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ClaraStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => ClaraStatus::Config,
            Error::Contract(_) => ClaraStatus::Contract,
            Error::Io(_) => ClaraStatus::Io,
            Error::Malformed { .. } | Error::Json(_) | Error::Csv(_) => ClaraStatus::Malformed,
            _ => ClaraStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ClaraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClaraStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ClaraStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ClaraStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ClaraStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn mut_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn array3<T: Copy>(p: *const T, what: &str) -> Result<[T; 3], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok([*p, *p.add(1), *p.add(2)])
}

unsafe fn write3<T: Copy>(p: *mut T, v: [T; 3], what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    std::ptr::copy_nonoverlapping(v.as_ptr(), p, 3);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clara_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn clara_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates an environment. `config_toml` is a run configuration whose `[env]`
/// table is used; NULL or an empty string selects the defaults.
///
/// # Safety
/// `config_toml` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clara_env_new(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut ClaraEnv,
) -> ClaraStatus {
    guard(|| {
        let out = mut_ref(out, "out")?;
        let cfg = if config_toml.is_null() {
            EnvConfig::default()
        } else {
            RunConfig::from_toml_str(str_arg(config_toml, "config_toml")?, &[])?.env
        };
        let world = SliceWorld::new(cfg, seed)?;
        *out = Box::into_raw(Box::new(ClaraEnv { world }));
        Ok(())
    })
}

/// # Safety
/// `env` must be NULL or a handle from `clara_env_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clara_env_free(env: *mut ClaraEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts a new episode; writes the initial user counts to `counts_out[3]`.
///
/// # Safety
/// `env` must be a live handle; `counts_out` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn clara_env_reset(
    env: *mut ClaraEnv,
    seed: u64,
    counts_out: *mut u32,
) -> ClaraStatus {
    guard(|| {
        let env = mut_ref(env, "env")?;
        let obs = env.world.reset(seed)?;
        write3(counts_out, obs.counts, "counts_out")
    })
}

/// Current user counts.
///
/// # Safety
/// `env` must be a live handle; `counts_out` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn clara_env_observe(
    env: *const ClaraEnv,
    counts_out: *mut u32,
) -> ClaraStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        write3(counts_out, env.world.observation().counts, "counts_out")
    })
}

/// Bandwidth budget per slot, kilobits.
///
/// # Safety
/// `env` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clara_env_total_bandwidth(
    env: *const ClaraEnv,
    out: *mut f64,
) -> ClaraStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        *mut_ref(out, "out")? = env.world.config().total_bandwidth_kb;
        Ok(())
    })
}

/// Simulates one slot under `action_kb[3]` (non-negative, summing to at
/// most the budget).
///
/// # Safety
/// `env` must be a live handle; `action_kb` must hold 3 values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clara_env_step(
    env: *mut ClaraEnv,
    action_kb: *const f64,
    out: *mut ClaraStepResult,
) -> ClaraStatus {
    guard(|| {
        let env = mut_ref(env, "env")?;
        let out = mut_ref(out, "out")?;
        let a = array3(action_kb, "action_kb")?;
        let step = env.world.step(&Action::new(a))?;
        *out = ClaraStepResult {
            reward: step.reward,
            dissatisfaction: step.cum_costs,
            latency: step.inst_costs,
            next_counts: step.next_obs.counts,
        };
        Ok(())
    })
}

/// Creates one of the allocators `one_third`, `user_number`,
/// `packet_number` or `traffic_demand`.
///
/// # Safety
/// `kind` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clara_allocator_new(
    kind: *const c_char,
    out: *mut *mut ClaraAllocator,
) -> ClaraStatus {
    guard(|| {
        let out = mut_ref(out, "out")?;
        let name = str_arg(kind, "kind")?;
        let kind = BaselineKind::from_name(name).ok_or_else(|| {
            Failure(
                ClaraStatus::InvalidArgument,
                format!("unknown allocator {name:?}"),
            )
        })?;
        *out = Box::into_raw(Box::new(ClaraAllocator { kind }));
        Ok(())
    })
}

/// # Safety
/// `alloc` must be NULL or a handle from `clara_allocator_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clara_allocator_free(alloc: *mut ClaraAllocator) {
    if !alloc.is_null() {
        drop(Box::from_raw(alloc));
    }
}

/// Allocation for `env`'s upcoming slot, written to `out_kb[3]`.
///
/// # Safety
/// Both handles must be live; `out_kb` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn clara_allocator_allocate(
    alloc: *const ClaraAllocator,
    env: *const ClaraEnv,
    out_kb: *mut f64,
) -> ClaraStatus {
    guard(|| {
        let alloc = alloc.as_ref().ok_or_else(|| null("alloc"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        write3(out_kb, allocate_in(alloc.kind, &env.world)?, "out_kb")
    })
}

/// Loads a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clara_policy_load(
    path: *const c_char,
    out: *mut *mut ClaraPolicy,
) -> ClaraStatus {
    guard(|| {
        let out = mut_ref(out, "out")?;
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(ClaraPolicy {
            inner: DeployedPolicy::from_checkpoint(&ck)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be NULL or a handle from `clara_policy_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clara_policy_free(policy: *mut ClaraPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Deterministic allocation for user counts `counts[3]`, written to `out_kb[3]`.
///
/// # Safety
/// `policy` must be live; `counts` and `out_kb` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn clara_policy_act(
    policy: *const ClaraPolicy,
    counts: *const u32,
    out_kb: *mut f64,
) -> ClaraStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        let counts = array3(counts, "counts")?;
        let obs = clara::env::Observation { counts };
        write3(out_kb, policy.inner.act(&obs), "out_kb")
    })
}

/// `total * softmax(logits)` over `n` entries.
///
/// # Safety
/// `logits` and `out` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn clara_softmax_project(
    logits: *const f64,
    n: usize,
    total: f64,
    out: *mut f64,
) -> ClaraStatus {
    guard(|| {
        if logits.is_null() || out.is_null() {
            return Err(null("logits or out"));
        }
        if n == 0 {
            return Err(Failure(
                ClaraStatus::InvalidArgument,
                "n must be >= 1".into(),
            ));
        }
        let x = std::slice::from_raw_parts(logits, n);
        if x.iter().any(|v| !v.is_finite()) || !(total.is_finite() && total >= 0.0) {
            return Err(Failure(
                ClaraStatus::InvalidArgument,
                "logits and total must be finite".into(),
            ));
        }
        let y = softmax_project(x, total);
        std::ptr::copy_nonoverlapping(y.as_ptr(), out, n);
        Ok(())
    })
}

const _: () = assert!(NUM_SLICES == 3);
