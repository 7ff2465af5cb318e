//! Point-mass car-following environment.
//!
//! The follower is integrated with a forward-Euler speed update and a
//! trapezoidal spacing update; the leader's speed is an external input taken
//! verbatim from a recorded period.

use serde::{Deserialize, Serialize};

use crate::data::CfPeriod;
use crate::error::{Error, Result};

/// Default simulation step, seconds.
pub const DEFAULT_DT: f64 = 0.1;
/// Symmetric bound on follower acceleration, m/s².
pub const MAX_ACCEL: f64 = 3.0;

/// Instantaneous car-following state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfState {
    /// Follower speed, m/s.
    pub v_follow: f64,
    /// Leader speed minus follower speed, m/s.
    pub dv: f64,
    /// Net spacing, m.
    pub gap: f64,
}

impl CfState {
    pub fn new(v_follow: f64, dv: f64, gap: f64) -> Self {
        Self { v_follow, dv, gap }
    }

    pub fn v_lead(&self) -> f64 {
        self.v_follow + self.dv
    }

    pub fn is_valid(&self) -> bool {
        self.v_follow.is_finite()
            && self.dv.is_finite()
            && self.gap.is_finite()
            && self.v_follow >= 0.0
    }
}

/// Anything that maps the current state to a follower acceleration.
///
/// Stateful models (reaction-time windows, recurrent cells, replays) are reset
/// at the start of every episode with the episode's initial state.
pub trait Policy {
    fn reset(&mut self, _initial: &CfState) {}
    fn act(&mut self, state: &CfState) -> f64;
}

impl<F: FnMut(&CfState) -> f64> Policy for F {
    fn act(&mut self, state: &CfState) -> f64 {
        self(state)
    }
}

/// A frozen, shareable car-following model that hands out fresh policies.
///
/// Evaluation rolls many periods out in parallel, one policy per period.
pub trait CarFollowingModel: Send + Sync {
    fn policy_for(&self, period: &CfPeriod) -> Box<dyn Policy + '_>;
}

/// Model whose policy replays each period's recorded follower accelerations.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayModel;

impl CarFollowingModel for ReplayModel {
    fn policy_for(&self, period: &CfPeriod) -> Box<dyn Policy + '_> {
        Box::new(ReplayPolicy::from_period(period))
    }
}

/// Replays a fixed acceleration sequence, then holds zero.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    accels: Vec<f64>,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(accels: Vec<f64>) -> Self {
        Self { accels, cursor: 0 }
    }

    pub fn from_period(period: &CfPeriod) -> Self {
        Self::new(period.samples.iter().map(|s| s.a_follow).collect())
    }
}

impl Policy for ReplayPolicy {
    fn reset(&mut self, _initial: &CfState) {
        self.cursor = 0;
    }

    fn act(&mut self, _state: &CfState) -> f64 {
        let a = self.accels.get(self.cursor).copied().unwrap_or(0.0);
        self.cursor += 1;
        a
    }
}

/// Result of rolling a policy out over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub dt: f64,
    pub states: Vec<CfState>,
    /// Applied (clamped) accelerations; one fewer than `states`.
    pub actions: Vec<f64>,
    pub collided: bool,
}

impl SimTrajectory {
    pub fn gaps(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.gap).collect()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.v_follow).collect()
    }
}

pub fn clamp_action(a_raw: f64) -> Result<f64> {
    if !a_raw.is_finite() {
        return Err(Error::InvalidAction(a_raw));
    }
    Ok(a_raw.clamp(-MAX_ACCEL, MAX_ACCEL))
}

/// Advances the state by one step.
///
/// The speed is floored at zero; when the floor engages, the effective
/// acceleration `(v' - v) / dt` is what the spacing update sees, which keeps
/// the trapezoidal identity `gap' - gap = (dv + dv') / 2 * dt` exact.
pub fn step_state(s: &CfState, a: f64, v_lead_next: f64, dt: f64) -> CfState {
    let v_next = (s.v_follow + a * dt).max(0.0);
    let dv_next = v_lead_next - v_next;
    let gap_next = s.gap + (s.dv + dv_next) / 2.0 * dt;
    CfState {
        v_follow: v_next,
        dv: dv_next,
        gap: gap_next,
    }
}

/// Rolls `policy` out against the recorded leader of `period`.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    period: &CfPeriod,
    dt: f64,
) -> Result<SimTrajectory> {
    let n = period.samples.len();
    if n < 2 {
        return Err(Error::EmptyPeriod(n));
    }
    if !(dt > 0.0) || (dt - period.dt).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "simulation step {dt} does not match period sampling step {}",
            period.dt
        )));
    }
    let initial = period.initial_state();
    policy.reset(&initial);

    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n - 1);
    states.push(initial);
    let mut collided = false;
    let mut state = initial;
    for next in &period.samples[1..] {
        let a = clamp_action(policy.act(&state))?;
        state = step_state(&state, a, next.v_lead, dt);
        actions.push(a);
        states.push(state);
        if state.gap <= 0.0 {
            collided = true;
            break;
        }
    }
    Ok(SimTrajectory {
        dt,
        states,
        actions,
        collided,
    })
}
