//! Deep deterministic policy gradient agent that learns a follower's
//! acceleration policy by imitating recorded trajectories.

mod agent;
mod replay;
mod train;

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::CfState;

pub use agent::{
    critic_targets, select_action, train_step, ActorModel, DdpgModel, DdpgPolicy, StepStats,
};
pub use replay::{ReplayBuffer, Transition};
pub use train::{curves_to_csv, retrain, train, CurvePoint, LEARNING_CURVE_HEADER};

/// Relative errors are clipped to this range before the log, which bounds the
/// reward to ±ln(1000).
pub const REWARD_CLIP: (f64, f64) = (1e-3, 1e3);

/// Reward given on a collision step.
pub const COLLISION_REWARD: f64 = -6.907755278982137;

/// Observed speeds/gaps are floored here when computing training rewards so
/// that standstill samples do not make the relative error undefined.
pub const OBS_FLOOR: f64 = 0.1;

/// Which observed quantity the reward compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Spacing,
    Speed,
}

impl RewardMode {
    pub fn pick(self, s: &CfState) -> f64 {
        match self {
            RewardMode::Spacing => s.gap,
            RewardMode::Speed => s.v_follow,
        }
    }
}

/// `−ln(clip(|sim − obs| / obs))`: larger when the simulation tracks the
/// observation more closely.
pub fn reward(sim: f64, obs: f64) -> Result<f64> {
    if !(obs > 0.0) || !obs.is_finite() {
        return Err(Error::InvalidObservation(obs));
    }
    let e = ((sim - obs).abs() / obs).clamp(REWARD_CLIP.0, REWARD_CLIP.1);
    if e.is_nan() {
        return Err(Error::InvalidObservation(sim));
    }
    Ok(-e.ln())
}

/// Agent hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub minibatch: usize,
    pub replay_start: usize,
    pub replay_capacity: usize,
    pub tau: f64,
    pub episodes: usize,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub reward_mode: RewardMode,
    /// Number of consecutive states fed to the networks (1 = no reaction time).
    pub rt_window: usize,
    pub hidden: usize,
    /// Divisors applied to (speed, relative speed, gap) before network input.
    pub state_scale: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(RewardMode::Spacing, false)
    }
}

impl TrainConfig {
    /// Standard settings; `reaction_time` switches to a 1 s (10-step) input
    /// window and a 100-unit hidden layer.
    pub fn preset(reward_mode: RewardMode, reaction_time: bool) -> Self {
        Self {
            learning_rate: 5e-4,
            gamma: 0.9,
            minibatch: 256,
            replay_start: 7000,
            replay_capacity: 10000,
            tau: 0.01,
            episodes: 60,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            reward_mode,
            rt_window: if reaction_time { 10 } else { 1 },
            hidden: if reaction_time { 100 } else { 30 },
            state_scale: [30.0, 10.0, 100.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.minibatch == 0 || self.replay_capacity == 0 {
            return bad("minibatch and replay_capacity must be positive");
        }
        if self.replay_start > self.replay_capacity {
            return bad("replay_start must not exceed replay_capacity");
        }
        if self.minibatch > self.replay_capacity {
            return bad("minibatch must not exceed replay_capacity");
        }
        if self.rt_window == 0 || self.hidden == 0 {
            return bad("rt_window and hidden must be positive");
        }
        if self.state_scale.iter().any(|s| !(*s > 0.0)) {
            return bad("state_scale entries must be positive");
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        3 * self.rt_window
    }
}

/// Ornstein–Uhlenbeck exploration noise with unit time step and zero mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub state: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64) -> Self {
        Self {
            theta,
            sigma,
            state: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    /// Advances the process one step and returns the new value.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = if self.sigma == 0.0 {
            0.0
        } else {
            rng.sample(StandardNormal)
        };
        self.state += self.theta * (0.0 - self.state) + self.sigma * z;
        self.state
    }

    pub fn stationary_std(&self) -> f64 {
        self.sigma / (2.0 * self.theta - self.theta * self.theta).sqrt()
    }
}

/// Sliding window over the most recent states, oldest first, flattened and
/// normalized for network input. Reset fills it with copies of the initial
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct InputWindow {
    len: usize,
    scale: [f64; 3],
    states: VecDeque<CfState>,
}

impl InputWindow {
    pub fn new(len: usize, scale: [f64; 3]) -> Self {
        Self {
            len: len.max(1),
            scale,
            states: VecDeque::with_capacity(len.max(1)),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.rt_window, cfg.state_scale)
    }

    pub fn reset(&mut self, initial: &CfState) {
        self.states.clear();
        self.states.extend(std::iter::repeat_n(*initial, self.len));
    }

    pub fn push(&mut self, s: &CfState) {
        if self.states.is_empty() {
            self.reset(s);
            return;
        }
        self.states.pop_front();
        self.states.push_back(*s);
    }

    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.len);
        for s in &self.states {
            out.push(s.v_follow / self.scale[0]);
            out.push(s.dv / self.scale[1]);
            out.push(s.gap / self.scale[2]);
        }
        out
    }

    pub fn states(&self) -> impl Iterator<Item = &CfState> {
        self.states.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use proptest::prelude::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn reward_examples() {
        assert_eq!(reward(20.0, 10.0).unwrap(), 0.0);
        assert!((reward(11.0, 10.0).unwrap() - 2.302585).abs() < 1e-6);
        assert!((reward(10.0, 10.0).unwrap() - 6.9078).abs() < 1e-4);
        assert!((reward(1e9, 1.0).unwrap() - COLLISION_REWARD).abs() < 1e-12);
        assert!((COLLISION_REWARD + 1e3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reward_rejects_nonpositive_observation() {
        assert!(matches!(
            reward(1.0, 0.0),
            Err(Error::InvalidObservation(_))
        ));
        assert!(matches!(
            reward(1.0, -2.0),
            Err(Error::InvalidObservation(_))
        ));
    }

    proptest! {
        #[test]
        fn reward_non_increasing_in_error(obs in 0.1f64..100.0, d1 in 0.0f64..200.0, d2 in 0.0f64..200.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let r_lo = reward(obs + lo, obs).unwrap();
            let r_hi = reward(obs - hi, obs).unwrap();
            prop_assert!(r_hi <= r_lo);
            prop_assert!(r_lo.abs() <= -COLLISION_REWARD + 1e-12);
        }
    }

    #[test]
    fn ou_pure_mean_reversion() {
        let mut rng = stream_rng(0, "t");
        let mut n = OuNoise {
            theta: 0.15,
            sigma: 0.0,
            state: 1.0,
        };
        assert!((n.sample(&mut rng) - 0.85).abs() < 1e-15);
        n.state = 0.0;
        assert_eq!(n.sample(&mut rng), 0.0);
    }

    #[test]
    fn ou_stationary_std() {
        let mut rng = stream_rng(3, "ou");
        let mut n = OuNoise::new(0.15, 0.2);
        for _ in 0..1000 {
            n.sample(&mut rng);
        }
        let (mut s, mut s2) = (0.0, 0.0);
        let k = 1_000_000;
        for _ in 0..k {
            let x = n.sample(&mut rng);
            s += x;
            s2 += x * x;
        }
        let mean = s / k as f64;
        let sd = (s2 / k as f64 - mean * mean).sqrt();
        assert!((sd - 0.38).abs() <= 0.02, "sd {sd}");
        assert!((n.stationary_std() - 0.3797).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let d = TrainConfig::default();
        let c = TrainConfig {
            replay_start: d.replay_capacity + 1,
            ..d.clone()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig { gamma: 0.0, ..d };
        assert!(c.validate().is_err());
        let rt = TrainConfig::preset(RewardMode::Speed, true);
        assert_eq!((rt.state_dim(), rt.hidden), (30, 100));
    }

    #[test]
    fn window_is_oldest_first_and_padded() {
        let mut w = InputWindow::new(3, [1.0, 1.0, 1.0]);
        w.reset(&CfState::new(1.0, 0.0, 10.0));
        assert_eq!(
            w.features(),
            vec![1.0, 0.0, 10.0, 1.0, 0.0, 10.0, 1.0, 0.0, 10.0]
        );
        w.push(&CfState::new(2.0, 0.5, 11.0));
        assert_eq!(
            w.features(),
            vec![1.0, 0.0, 10.0, 1.0, 0.0, 10.0, 2.0, 0.5, 11.0]
        );
        w.push(&CfState::new(3.0, 0.5, 12.0));
        w.push(&CfState::new(4.0, 0.5, 13.0));
        assert_eq!(w.features()[0], 2.0);
        assert_eq!(w.features()[6], 4.0);
    }

    #[test]
    fn window_normalizes() {
        let mut w = InputWindow::new(1, [30.0, 10.0, 100.0]);
        w.reset(&CfState::new(15.0, -5.0, 50.0));
        assert_eq!(w.features(), vec![0.5, -0.5, 0.5]);
    }
}
