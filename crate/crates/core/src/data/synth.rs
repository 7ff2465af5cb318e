//! Synthetic naturalistic-style drivers.
//!
//! Leaders follow a bounded mean-reverting speed process with occasional stop
//! phases; followers are driven by an IDM whose parameters are drawn once per
//! driver from a style prior, plus optional white acceleration noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CfPeriod, DriverDataset, Sample, Style, MAX_LONG_DIST};
use crate::baselines::{idm_acceleration, IdmParams, IDM_BOUNDS};
use crate::error::{Error, Result};
use crate::kinematics::{step_state, CfState, DEFAULT_DT, MAX_ACCEL};
use crate::seed::stream_rng;

const STYLE_PRIORS_JSON: &str = include_str!("../../config/style_priors.json");
const MAX_LEADER_SPEED: f64 = 27.0;
const MIN_GAP: f64 = 0.1;

/// Per-parameter (mean, std) of a style's IDM parameter prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StylePrior {
    pub a_max: (f64, f64),
    pub a_conf: (f64, f64),
    pub v_desired: (f64, f64),
    pub beta: (f64, f64),
    pub s_jam: (f64, f64),
    pub t_headway: (f64, f64),
}

impl StylePrior {
    fn moments(&self) -> [(f64, f64); 6] {
        [
            self.a_max,
            self.a_conf,
            self.v_desired,
            self.beta,
            self.s_jam,
            self.t_headway,
        ]
    }

    /// Draws parameters, resampling each coordinate until it falls inside the calibration box.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> IdmParams {
        let mut x = [0.0; 6];
        for (i, ((mean, sd), (lo, hi))) in self.moments().into_iter().zip(IDM_BOUNDS).enumerate() {
            x[i] = loop {
                let z: f64 = rng.sample(StandardNormal);
                let v = mean + sd * z;
                if (lo..=hi).contains(&v) {
                    break v;
                }
            };
        }
        IdmParams::from_array(x)
    }
}

/// Versioned style priors plus the leader cruise-speed range for each style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePriors {
    pub version: u32,
    pub aggressive: StylePrior,
    pub conservative: StylePrior,
    pub aggressive_cruise: (f64, f64),
    pub conservative_cruise: (f64, f64),
}

impl StylePriors {
    pub fn builtin() -> Self {
        serde_json::from_str(STYLE_PRIORS_JSON).expect("bundled style priors are valid JSON")
    }

    fn for_style(&self, style: Style) -> (&StylePrior, (f64, f64)) {
        match style {
            Style::Conservative => (&self.conservative, self.conservative_cruise),
            _ => (&self.aggressive, self.aggressive_cruise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dt: f64,
    /// Std of white noise added to the follower's IDM acceleration, m/s².
    pub accel_noise_std: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    /// Probability that a period contains a stop-and-go phase.
    pub stop_probability: f64,
    pub priors: StylePriors,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            accel_noise_std: 0.05,
            min_duration: 16.0,
            max_duration: 40.0,
            stop_probability: 0.12,
            priors: StylePriors::builtin(),
        }
    }
}

impl SynthConfig {
    pub fn noiseless() -> Self {
        Self {
            accel_noise_std: 0.0,
            ..Self::default()
        }
    }
}

/// Leader speed series for one period.
fn leader_profile(cfg: &SynthConfig, cruise: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dt = cfg.dt;
    let duration = rng.gen_range(cfg.min_duration + 0.5..cfg.max_duration);
    let n = (duration / dt).round() as usize + 1;
    let base = rng.gen_range(cruise.0..cruise.1);
    let mut target = base;
    let stop = if rng.gen_bool(cfg.stop_probability) {
        let start = rng.gen_range(0..n / 2);
        let len = (rng.gen_range(6.0..14.0) / dt) as usize;
        Some(start..start + len)
    } else {
        None
    };

    let mut v: f64 = (base + rng.sample::<f64, _>(StandardNormal)).clamp(0.0, MAX_LEADER_SPEED);
    let mut jitter = 0.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(v);
        if rng.gen_bool((dt / 8.0).min(1.0)) {
            target =
                (base + 3.0 * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, MAX_LEADER_SPEED);
        }
        let stopping = stop.as_ref().is_some_and(|r| r.contains(&k));
        let (goal, gain) = if stopping { (0.0, 0.8) } else { (target, 0.35) };
        // OU acceleration jitter with a 2 s correlation time
        jitter += -jitter * dt / 2.0 + 0.6 * (dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
        let a = (gain * (goal - v) + jitter).clamp(-2.5, 2.0);
        v = (v + a * dt).clamp(0.0, MAX_LEADER_SPEED);
    }
    out
}

/// Drives an IDM follower behind a recorded leader speed series.
///
/// `a_follow` at sample k is the acceleration applied between k and k+1 (the
/// effective one if the zero-speed floor engaged); the last sample carries the
/// unapplied model acceleration. Returns `None` if the follower leaves the
/// valid gap range.
pub fn simulate_follower(
    params: &IdmParams,
    leader: &[f64],
    initial: CfState,
    dt: f64,
    noise_std: f64,
    noise_rng: &mut ChaCha8Rng,
) -> Option<Vec<Sample>> {
    let mut samples = Vec::with_capacity(leader.len());
    let mut state = initial;
    for k in 0..leader.len() {
        if !(state.gap > MIN_GAP && state.gap < MAX_LONG_DIST) {
            return None;
        }
        let mut a = idm_acceleration(params, state.v_follow, state.dv, state.gap).ok()?;
        if noise_std > 0.0 {
            a = (a + noise_std * noise_rng.sample::<f64, _>(StandardNormal))
                .clamp(-MAX_ACCEL, MAX_ACCEL);
        }
        let sample = |a_follow| Sample {
            v_follow: state.v_follow,
            v_lead: leader[k],
            gap: state.gap,
            a_follow,
        };
        if k + 1 == leader.len() {
            samples.push(sample(a));
            break;
        }
        let next = step_state(&state, a, leader[k + 1], dt);
        let applied = if next.v_follow == 0.0 && state.v_follow + a * dt < 0.0 {
            (next.v_follow - state.v_follow) / dt
        } else {
            a
        };
        samples.push(sample(applied));
        state = next;
    }
    Some(samples)
}

fn one_period(
    cfg: &SynthConfig,
    params: &IdmParams,
    cruise: (f64, f64),
    leader_rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    loop {
        let leader = leader_profile(cfg, cruise, leader_rng);
        let v0 = (leader[0] + 0.5 * leader_rng.sample::<f64, _>(StandardNormal)).max(0.0);
        let eq = params
            .equilibrium_gap(v0)
            .unwrap_or(params.s_jam + v0 * params.t_headway);
        let gap0 = eq * leader_rng.gen_range(0.85..1.25);
        let initial = CfState::new(v0, leader[0] - v0, gap0);
        if let Some(samples) = simulate_follower(
            params,
            &leader,
            initial,
            cfg.dt,
            cfg.accel_noise_std,
            noise_rng,
        ) {
            return samples;
        }
    }
}

/// Generates `n_periods` car-following periods for one synthetic driver.
pub fn generate_synthetic_driver(
    cfg: &SynthConfig,
    style: Style,
    n_periods: usize,
    seed: u64,
    driver_id: &str,
) -> Result<DriverDataset> {
    if n_periods == 0 {
        return Err(Error::InvalidConfig("n_periods must be at least 1".into()));
    }
    let mut param_rng = stream_rng(seed, "synth/params");
    let mut leader_rng = stream_rng(seed, "synth/leader");
    let mut noise_rng = stream_rng(seed, "synth/noise");
    let style = match style {
        Style::Unknown if param_rng.gen_bool(0.5) => Style::Aggressive,
        Style::Unknown => Style::Conservative,
        s => s,
    };
    let (prior, cruise) = cfg.priors.for_style(style);
    let params = prior.sample(&mut param_rng);
    let periods = (0..n_periods)
        .map(|_| {
            let samples = one_period(cfg, &params, cruise, &mut leader_rng, &mut noise_rng);
            CfPeriod::new(cfg.dt, samples, driver_id)
        })
        .collect();
    Ok(DriverDataset {
        driver_id: driver_id.to_string(),
        style,
        periods,
        ground_truth: Some(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mean_time_gap;
    use crate::kinematics::{run_episode, ReplayPolicy};

    fn pooled_mean(ds: &DriverDataset, f: impl Fn(&Sample) -> f64) -> f64 {
        let (s, n) = ds
            .periods
            .iter()
            .flat_map(|p| &p.samples)
            .fold((0.0, 0), |(s, n), x| (s + f(x), n + 1));
        s / n as f64
    }

    fn within(x: f64, target: f64, frac: f64) -> bool {
        (x - target).abs() <= frac * target
    }

    #[test]
    fn aggressive_matches_descriptive_targets() {
        let ds = generate_synthetic_driver(&SynthConfig::default(), Style::Aggressive, 100, 1, "a")
            .unwrap();
        let gap = pooled_mean(&ds, |s| s.gap);
        let tg = mean_time_gap(&ds.periods);
        assert!(within(gap, 15.90, 0.25), "mean gap {gap}");
        assert!(within(tg, 1.73, 0.25), "mean time gap {tg}");
    }

    #[test]
    fn conservative_matches_descriptive_targets() {
        let ds =
            generate_synthetic_driver(&SynthConfig::default(), Style::Conservative, 100, 1, "c")
                .unwrap();
        let gap = pooled_mean(&ds, |s| s.gap);
        assert!(within(gap, 20.10, 0.25), "mean gap {gap}");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic_driver(&cfg, Style::Aggressive, 5, 9, "x").unwrap();
        let b = generate_synthetic_driver(&cfg, Style::Aggressive, 5, 9, "x").unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_driver(&cfg, Style::Aggressive, 5, 10, "x").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn periods_satisfy_invariants_and_replay_exactly() {
        let ds =
            generate_synthetic_driver(&SynthConfig::default(), Style::Conservative, 20, 4, "c")
                .unwrap();
        for p in &ds.periods {
            assert!(p.satisfies_invariants());
            let traj = run_episode(&mut ReplayPolicy::from_period(p), p, p.dt).unwrap();
            for (s, o) in traj.states.iter().zip(&p.samples) {
                assert!((s.v_follow - o.v_follow).abs() <= 1e-9);
                assert!((s.gap - o.gap).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn follower_is_reproducible_from_its_inputs() {
        let cfg = SynthConfig::default();
        let ds = generate_synthetic_driver(&cfg, Style::Aggressive, 1, 3, "a").unwrap();
        let params = ds.ground_truth.unwrap();
        let p = &ds.periods[0];
        let leader: Vec<f64> = p.samples.iter().map(|s| s.v_lead).collect();
        // the first period consumes the noise stream from its start
        let mut noise = stream_rng(3, "synth/noise");
        let again = simulate_follower(
            &params,
            &leader,
            p.initial_state(),
            cfg.dt,
            cfg.accel_noise_std,
            &mut noise,
        );
        assert_eq!(again.as_deref(), Some(&p.samples[..]));
    }

    #[test]
    fn zero_periods_rejected() {
        assert!(
            generate_synthetic_driver(&SynthConfig::default(), Style::Aggressive, 0, 1, "a")
                .is_err()
        );
    }
}
