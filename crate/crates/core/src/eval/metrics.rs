use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::{run_episode, CarFollowingModel, SimTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Spacing,
    Speed,
}

/// Root mean square percentage error in ratio-of-sums form:
/// `sqrt(Σ(sim − obs)² / Σ obs²)`.
pub fn rmspe(sim: &[f64], obs: &[f64]) -> Result<f64> {
    let mut acc = RmspeAccumulator::default();
    acc.add(sim, obs)?;
    acc.value()
}

/// Pools squared errors and squared observations across many series so the
/// final ratio is taken once over all samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmspeAccumulator {
    pub sq_err: f64,
    pub sq_obs: f64,
    pub count: usize,
}

impl RmspeAccumulator {
    pub fn add(&mut self, sim: &[f64], obs: &[f64]) -> Result<()> {
        if sim.len() != obs.len() {
            return Err(Error::LengthMismatch(sim.len(), obs.len()));
        }
        for (s, o) in sim.iter().zip(obs) {
            self.sq_err += (s - o) * (s - o);
            self.sq_obs += o * o;
        }
        self.count += sim.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &RmspeAccumulator) {
        self.sq_err += other.sq_err;
        self.sq_obs += other.sq_obs;
        self.count += other.count;
    }

    pub fn value(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::LengthMismatch(0, 0));
        }
        if self.sq_obs == 0.0 {
            return Err(Error::ZeroDenominator);
        }
        Ok((self.sq_err / self.sq_obs).sqrt())
    }
}

/// Pooled spacing and speed RMSPE of a model over a set of periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutErrors {
    pub spacing: f64,
    pub speed: f64,
    /// Number of rollouts that ended in a collision.
    pub collisions: usize,
}

impl RolloutErrors {
    pub fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Spacing => self.spacing,
            Quantity::Speed => self.speed,
        }
    }
}

/// Accumulates one trajectory against its period. A collided (truncated)
/// trajectory is compared with the matching prefix of the observations.
pub fn accumulate_trajectory(
    traj: &SimTrajectory,
    period: &CfPeriod,
    spacing: &mut RmspeAccumulator,
    speed: &mut RmspeAccumulator,
) -> Result<()> {
    let n = traj.states.len();
    let obs = &period.samples[..n];
    let sim_gap: Vec<f64> = traj.states.iter().map(|s| s.gap).collect();
    let sim_v: Vec<f64> = traj.states.iter().map(|s| s.v_follow).collect();
    spacing.add(&sim_gap, &obs.iter().map(|s| s.gap).collect::<Vec<_>>())?;
    speed.add(&sim_v, &obs.iter().map(|s| s.v_follow).collect::<Vec<_>>())
}

/// Rolls `model` out over every period (in parallel) and pools the errors.
pub fn evaluate_model(
    model: &dyn CarFollowingModel,
    periods: &[CfPeriod],
) -> Result<RolloutErrors> {
    let per_period: Vec<(RmspeAccumulator, RmspeAccumulator, bool)> = periods
        .par_iter()
        .map(|p| {
            let mut policy = model.policy_for(p);
            let traj = run_episode(&mut *policy, p, p.dt)?;
            let (mut sp, mut sv) = (RmspeAccumulator::default(), RmspeAccumulator::default());
            accumulate_trajectory(&traj, p, &mut sp, &mut sv)?;
            Ok((sp, sv, traj.collided))
        })
        .collect::<Result<_>>()?;
    // merged in period order so results do not depend on thread scheduling
    let (mut spacing, mut speed, mut collisions) =
        (RmspeAccumulator::default(), RmspeAccumulator::default(), 0);
    for (sp, sv, c) in &per_period {
        spacing.merge(sp);
        speed.merge(sv);
        collisions += usize::from(*c);
    }
    Ok(RolloutErrors {
        spacing: spacing.value()?,
        speed: speed.value()?,
        collisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent direct summation.
    fn oracle(sim: &[f64], obs: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..sim.len() {
            num += (sim[i] - obs[i]).powi(2);
            den += obs[i].powi(2);
        }
        (num / den).sqrt()
    }

    #[test]
    fn identical_series_score_zero() {
        let x = [3.0, 4.0, 5.0];
        assert_eq!(rmspe(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn uniform_ten_percent_scaling() {
        let obs = [2.0, 7.5, 11.0, 0.3];
        let sim: Vec<f64> = obs.iter().map(|o| 1.1 * o).collect();
        assert!((rmspe(&sim, &obs).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            rmspe(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            rmspe(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn pooling_differs_from_averaging() {
        let mut acc = RmspeAccumulator::default();
        acc.add(&[11.0], &[10.0]).unwrap();
        acc.add(&[2.0], &[1.0]).unwrap();
        assert!((acc.value().unwrap() - oracle(&[11.0, 2.0], &[10.0, 1.0])).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_direct_summation(pairs in prop::collection::vec((-50.0f64..50.0, 0.5f64..50.0), 1..200)) {
            let (sim, obs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let v = rmspe(&sim, &obs).unwrap();
            prop_assert!((v - oracle(&sim, &obs)).abs() <= 1e-12 * (1.0 + v));
        }

        #[test]
        fn scale_covariant(pairs in prop::collection::vec((0.0f64..50.0, 0.5f64..50.0), 1..100), c in 0.01f64..100.0) {
            let (sim, obs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = rmspe(&sim, &obs).unwrap();
            let sc = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
            let b = rmspe(&sc(&sim), &sc(&obs)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
