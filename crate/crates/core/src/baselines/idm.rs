use serde::{Deserialize, Serialize};

use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::{CarFollowingModel, CfState, Policy, MAX_ACCEL};

/// Intelligent-driver-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Comfortable deceleration, m/s².
    pub a_conf: f64,
    /// Desired speed, m/s.
    pub v_desired: f64,
    /// Free-road acceleration exponent.
    pub beta: f64,
    /// Standstill spacing, m.
    pub s_jam: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
}

/// Calibration search box, in [`IdmParams::to_array`] order.
pub const IDM_BOUNDS: [(f64, f64); 6] = [
    (0.1, 5.0),
    (0.1, 5.0),
    (1.0, 40.0),
    (1.0, 10.0),
    (0.1, 10.0),
    (0.1, 5.0),
];

impl IdmParams {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.a_max,
            self.a_conf,
            self.v_desired,
            self.beta,
            self.s_jam,
            self.t_headway,
        ]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            a_max: x[0],
            a_conf: x[1],
            v_desired: x[2],
            beta: x[3],
            s_jam: x[4],
            t_headway: x[5],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite() && *x > 0.0)
    }

    pub fn in_bounds(&self) -> bool {
        self.to_array()
            .iter()
            .zip(IDM_BOUNDS)
            .all(|(x, (lo, hi))| (lo..=hi).contains(x))
    }

    /// Desired dynamic spacing for speed `v` and relative speed `dv` (leader − follower).
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let brake_term = v * dv / (2.0 * (self.a_max * self.a_conf).sqrt());
        self.s_jam + (v * self.t_headway - brake_term).max(0.0)
    }

    /// Steady-state spacing at speed `v` behind a leader at the same speed.
    /// `None` when `v` is at or above the desired speed.
    pub fn equilibrium_gap(&self, v: f64) -> Option<f64> {
        let free = 1.0 - (v / self.v_desired).powf(self.beta);
        (free > 0.0).then(|| (self.s_jam + v * self.t_headway) / free.sqrt())
    }
}

/// IDM acceleration, clamped to the action bounds.
pub fn idm_acceleration(p: &IdmParams, v: f64, dv: f64, gap: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::Collision(gap));
    }
    let interaction = p.desired_gap(v, dv) / gap;
    let a = p.a_max * (1.0 - (v / p.v_desired).powf(p.beta) - interaction * interaction);
    Ok(a.clamp(-MAX_ACCEL, MAX_ACCEL))
}

/// IDM as a rollout policy; a non-positive gap yields full braking.
#[derive(Debug, Clone, Copy)]
pub struct IdmPolicy(pub IdmParams);

impl Policy for IdmPolicy {
    fn act(&mut self, s: &CfState) -> f64 {
        idm_acceleration(&self.0, s.v_follow, s.dv, s.gap).unwrap_or(-MAX_ACCEL)
    }
}

impl CarFollowingModel for IdmParams {
    fn policy_for(&self, _period: &CfPeriod) -> Box<dyn Policy + '_> {
        Box::new(IdmPolicy(*self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CfPeriod, Sample};
    use crate::kinematics::{run_episode, DEFAULT_DT};

    fn reference() -> IdmParams {
        IdmParams {
            a_max: 1.0,
            a_conf: 1.5,
            v_desired: 15.0,
            beta: 4.0,
            s_jam: 2.0,
            t_headway: 1.2,
        }
    }

    #[test]
    fn standstill_equilibrium() {
        let p = reference();
        assert_eq!(idm_acceleration(&p, 0.0, 0.0, p.s_jam).unwrap(), 0.0);
    }

    #[test]
    fn free_flow_limit() {
        let p = reference();
        assert!(idm_acceleration(&p, 15.0, 0.0, 1e6).unwrap().abs() < 1e-8);
    }

    #[test]
    fn hand_evaluated_point() {
        // 1 * (1 - (10/15)^4 - (14/14)^2)
        let a = idm_acceleration(&reference(), 10.0, 0.0, 14.0).unwrap();
        assert!((a - (-16.0 / 81.0)).abs() < 1e-12);
        assert!((a - -0.19753).abs() < 1e-5);
    }

    #[test]
    fn collision_state_rejected() {
        assert!(matches!(
            idm_acceleration(&reference(), 5.0, 0.0, 0.0),
            Err(Error::Collision(_))
        ));
        assert!(idm_acceleration(&reference(), 5.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn rational_driving_constraints() {
        let p = IdmParams {
            a_max: 1.4,
            a_conf: 2.0,
            v_desired: 30.0,
            beta: 4.0,
            s_jam: 2.0,
            t_headway: 1.5,
        };
        let h = 1e-4;
        for v in (0..28).map(|i| i as f64) {
            for dv in [-4.0, -1.0, 0.0, 1.0, 4.0] {
                for gap in [1.0, 3.0, 8.0, 20.0, 50.0, 110.0] {
                    let a = |v: f64, g: f64| idm_acceleration(&p, v, dv, g).unwrap();
                    assert!(
                        a(v, gap + h) - a(v, gap) >= -1e-12,
                        "da/dgap at v={v} dv={dv} gap={gap}"
                    );
                    assert!(
                        a(v + h, gap) - a(v, gap) <= 1e-12,
                        "da/dv at v={v} dv={dv} gap={gap}"
                    );
                }
            }
        }
    }

    #[test]
    fn equilibrium_is_held() {
        let p = IdmParams {
            a_max: 1.2,
            a_conf: 1.8,
            v_desired: 25.0,
            beta: 4.0,
            s_jam: 2.5,
            t_headway: 1.4,
        };
        let v = 12.0;
        let gap = p.equilibrium_gap(v).unwrap();
        assert!(idm_acceleration(&p, v, 0.0, gap).unwrap().abs() < 1e-12);
        let samples = vec![
            Sample {
                v_follow: v,
                v_lead: v,
                gap,
                a_follow: 0.0
            };
            101
        ];
        let period = CfPeriod::new(DEFAULT_DT, samples, "eq");
        let traj = run_episode(&mut IdmPolicy(p), &period, DEFAULT_DT).unwrap();
        let last = traj.states.last().unwrap();
        assert!((last.v_follow - v).abs() < 1e-6);
        assert!((last.gap - gap).abs() < 1e-6);
    }

    #[test]
    fn output_is_bounded() {
        let p = reference();
        for gap in [0.01, 0.5, 2.0, 1e4] {
            for v in [0.0, 5.0, 40.0] {
                let a = idm_acceleration(&p, v, -10.0, gap).unwrap();
                assert!((-3.0..=3.0).contains(&a));
            }
        }
    }
}
