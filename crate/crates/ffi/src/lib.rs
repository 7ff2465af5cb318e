//! C ABI over the `carfollow` library.
//!
//! Every fallible function returns a [`CfStatus`] and writes results through
//! out-pointers. On failure the message for the calling thread is available
//! from [`cf_last_error_message`] until the next failing call on that thread.
//!
//! Handles are opaque and owned by the caller; free each with its `_free`
//! function. A policy keeps its model alive, so the two may be freed in any
//! order.

#![allow(clippy::missing_safety_doc, clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use carfollow::baselines::{idm_acceleration, IdmParams};
use carfollow::data::{io::read_period_csv, Sample};
use carfollow::eval::rmspe;
use carfollow::kinematics::{self as kin, run_episode, Policy};
use carfollow::model_file::ModelFile;
use carfollow::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Follower state: own speed, leader minus follower speed, and bumper gap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfState {
    pub v_follow: f64,
    pub dv: f64,
    pub gap: f64,
}

impl From<CfState> for kin::CfState {
    fn from(s: CfState) -> Self {
        kin::CfState::new(s.v_follow, s.dv, s.gap)
    }
}

impl From<kin::CfState> for CfState {
    fn from(s: kin::CfState) -> Self {
        CfState {
            v_follow: s.v_follow,
            dv: s.dv,
            gap: s.gap,
        }
    }
}

/// Intelligent Driver Model parameters (SI units).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfIdmParams {
    pub a_max: f64,
    pub a_conf: f64,
    pub v_desired: f64,
    pub beta: f64,
    pub s_jam: f64,
    pub t_headway: f64,
}

impl From<CfIdmParams> for IdmParams {
    fn from(p: CfIdmParams) -> Self {
        IdmParams {
            a_max: p.a_max,
            a_conf: p.a_conf,
            v_desired: p.v_desired,
            beta: p.beta,
            s_jam: p.s_jam,
            t_headway: p.t_headway,
        }
    }
}

/// A loaded model file.
pub struct CfModel {
    file: Arc<ModelFile>,
    kind: CString,
}

/// One recorded car-following period.
pub struct CfPeriod(carfollow::data::CfPeriod);

/// A stepwise policy bound to a model.
pub struct CfPolicy {
    // Declared before `_model` so it is dropped first; it borrows from it.
    policy: Box<dyn Policy + 'static>,
    _model: Arc<ModelFile>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(CfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CfStatus::Io,
            Error::Format { .. } | Error::MalformedLog(_) => CfStatus::Format,
            Error::InvalidAction(_) | Error::Divergence(_) | Error::ZeroDenominator => {
                CfStatus::Numerical
            }
            _ => CfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: CfStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(CfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(CfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(deref(p, what)?, n))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    let s = CStr::from_ptr(deref(p, "path")?)
        .to_str()
        .map_err(|_| fail(CfStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// IDM acceleration for one state, before action clamping.
#[no_mangle]
pub unsafe extern "C" fn cf_idm_acceleration(
    params: *const CfIdmParams,
    v_follow: f64,
    dv: f64,
    gap: f64,
    out_accel: *mut f64,
) -> CfStatus {
    guard(|| {
        let p = IdmParams::from(*deref(params, "params")?);
        *out(out_accel, "out_accel")? = idm_acceleration(&p, v_follow, dv, gap)?;
        Ok(())
    })
}

/// Advances `state` by one step under acceleration `accel` (clamped to the
/// action limits) with the leader reaching `v_lead_next`.
#[no_mangle]
pub unsafe extern "C" fn cf_step_state(
    state: *const CfState,
    accel: f64,
    v_lead_next: f64,
    dt: f64,
    out_state: *mut CfState,
) -> CfStatus {
    guard(|| {
        let s = kin::CfState::from(*deref(state, "state")?);
        if !(dt > 0.0) || !v_lead_next.is_finite() {
            return Err(fail(
                CfStatus::InvalidArgument,
                "dt must be positive and v_lead_next finite",
            ));
        }
        let a = kin::clamp_action(accel)?;
        *out(out_state, "out_state")? = kin::step_state(&s, a, v_lead_next, dt).into();
        Ok(())
    })
}

/// Root mean square percentage error of `sim` against `obs`, both of length `n`.
#[no_mangle]
pub unsafe extern "C" fn cf_rmspe(
    sim: *const f64,
    obs: *const f64,
    n: usize,
    out_value: *mut f64,
) -> CfStatus {
    guard(|| {
        let (sim, obs) = (slice(sim, n, "sim")?, slice(obs, n, "obs")?);
        *out(out_value, "out_value")? = rmspe(sim, obs)?;
        Ok(())
    })
}

/// Loads a model file written by the command-line tool.
#[no_mangle]
pub unsafe extern "C" fn cf_model_load(
    path: *const c_char,
    out_model: *mut *mut CfModel,
) -> CfStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let file = ModelFile::load(path_arg(path)?)?;
        let kind = CString::new(file.model.kind_name()).expect("kind names have no NUL");
        *slot = Box::into_raw(Box::new(CfModel {
            file: Arc::new(file),
            kind,
        }));
        Ok(())
    })
}

/// Model kind (`idm`, `loess`, `nna`, `rnn`, `ddpg` or `replay`), valid while
/// the model lives. NULL for a NULL model.
#[no_mangle]
pub unsafe extern "C" fn cf_model_kind(model: *const CfModel) -> *const c_char {
    model.as_ref().map_or(std::ptr::null(), |m| m.kind.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn cf_model_free(model: *mut CfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Builds a period from `n` samples given column-wise. The first sample's
/// follower speed, leader speed and gap form the initial state.
#[no_mangle]
pub unsafe extern "C" fn cf_period_new(
    dt: f64,
    v_follow: *const f64,
    v_lead: *const f64,
    gap: *const f64,
    a_follow: *const f64,
    n: usize,
    out_period: *mut *mut CfPeriod,
) -> CfStatus {
    guard(|| {
        let slot = out(out_period, "out_period")?;
        if !(dt > 0.0) {
            return Err(fail(CfStatus::InvalidArgument, "dt must be positive"));
        }
        if n < 2 {
            return Err(Error::EmptyPeriod(n).into());
        }
        let (vf, vl) = (slice(v_follow, n, "v_follow")?, slice(v_lead, n, "v_lead")?);
        let (g, a) = (slice(gap, n, "gap")?, slice(a_follow, n, "a_follow")?);
        let samples = (0..n)
            .map(|i| Sample {
                v_follow: vf[i],
                v_lead: vl[i],
                gap: g[i],
                a_follow: a[i],
            })
            .collect();
        *slot = Box::into_raw(Box::new(CfPeriod(carfollow::data::CfPeriod::new(
            dt, samples, "",
        ))));
        Ok(())
    })
}

/// Reads a period CSV (`t,v_follow,v_lead,gap,a_follow`); the step is inferred
/// from the first two timestamps.
#[no_mangle]
pub unsafe extern "C" fn cf_period_load_csv(
    path: *const c_char,
    out_period: *mut *mut CfPeriod,
) -> CfStatus {
    guard(|| {
        let slot = out(out_period, "out_period")?;
        let p = read_period_csv(path_arg(path)?, None, "")?;
        if p.len() < 2 {
            return Err(Error::EmptyPeriod(p.len()).into());
        }
        *slot = Box::into_raw(Box::new(CfPeriod(p)));
        Ok(())
    })
}

/// Number of samples in the period, 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_period_len(period: *const CfPeriod) -> usize {
    period.as_ref().map_or(0, |p| p.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn cf_period_free(period: *mut CfPeriod) {
    if !period.is_null() {
        drop(Box::from_raw(period));
    }
}

/// Rolls `model` out against the leader of `period`.
///
/// Writes the simulated gaps and follower speeds (initial state included) to
/// `out_gap` / `out_speed`, each with room for `capacity` values, and the
/// number written to `out_len`. The rollout stops early at a collision, which
/// is reported through `out_collided` (1) rather than as an error. If the
/// buffers are too small, `out_len` receives the required length and
/// `CF_STATUS_BUFFER_TOO_SMALL` is returned.
#[no_mangle]
pub unsafe extern "C" fn cf_simulate(
    model: *const CfModel,
    period: *const CfPeriod,
    out_gap: *mut f64,
    out_speed: *mut f64,
    capacity: usize,
    out_len: *mut usize,
    out_collided: *mut i32,
) -> CfStatus {
    guard(|| {
        let (m, p) = (deref(model, "model")?, &deref(period, "period")?.0);
        let len = out(out_len, "out_len")?;
        let mut policy = m.file.model.as_model().policy_for(p);
        let traj = run_episode(&mut *policy, p, p.dt)?;
        *len = traj.states.len();
        if traj.states.len() > capacity {
            return Err(fail(
                CfStatus::BufferTooSmall,
                format!("need {} values, have room for {capacity}", *len),
            ));
        }
        let gaps = std::slice::from_raw_parts_mut(out(out_gap, "out_gap")?, capacity);
        let speeds = std::slice::from_raw_parts_mut(out(out_speed, "out_speed")?, capacity);
        for (i, s) in traj.states.iter().enumerate() {
            gaps[i] = s.gap;
            speeds[i] = s.v_follow;
        }
        if let Some(c) = out_collided.as_mut() {
            *c = i32::from(traj.collided);
        }
        Ok(())
    })
}

/// Creates a stepwise policy for `model`. `period` is only consulted by the
/// replay model and may be NULL otherwise. Call `cf_policy_reset` before the
/// first `cf_policy_act`.
#[no_mangle]
pub unsafe extern "C" fn cf_policy_new(
    model: *const CfModel,
    period: *const CfPeriod,
    out_policy: *mut *mut CfPolicy,
) -> CfStatus {
    guard(|| {
        let slot = out(out_policy, "out_policy")?;
        let m = deref(model, "model")?;
        let empty;
        let p = match period.as_ref() {
            Some(p) => &p.0,
            None => {
                empty = carfollow::data::CfPeriod::new(kin::DEFAULT_DT, Vec::new(), "");
                &empty
            }
        };
        let owner = Arc::clone(&m.file);
        let policy = owner.model.as_model().policy_for(p);
        // SAFETY: the policy borrows from the ModelFile behind `owner`, whose
        // heap address is stable and which CfPolicy keeps alive and drops last.
        let policy: Box<dyn Policy + 'static> = std::mem::transmute(policy);
        *slot = Box::into_raw(Box::new(CfPolicy {
            policy,
            _model: owner,
        }));
        Ok(())
    })
}

/// Starts a new episode from `initial`.
#[no_mangle]
pub unsafe extern "C" fn cf_policy_reset(
    policy: *mut CfPolicy,
    initial: *const CfState,
) -> CfStatus {
    guard(|| {
        let p = out(policy, "policy")?;
        p.policy.reset(&(*deref(initial, "initial")?).into());
        Ok(())
    })
}

/// Acceleration for `state`, clamped to the action limits.
#[no_mangle]
pub unsafe extern "C" fn cf_policy_act(
    policy: *mut CfPolicy,
    state: *const CfState,
    out_accel: *mut f64,
) -> CfStatus {
    guard(|| {
        let p = out(policy, "policy")?;
        let a = p.policy.act(&(*deref(state, "state")?).into());
        *out(out_accel, "out_accel")? = kin::clamp_action(a)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cf_policy_free(policy: *mut CfPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
