//! Car-following periods, driver datasets, and the operations that produce
//! and partition them.

mod cluster;
mod extract;
pub mod io;
mod split;
mod synth;

pub use cluster::{cluster_driving_styles, kmeans, style_features, KMeansResult, StyleFeatures};
pub use extract::{
    extract_periods, RawLogRecord, MAX_LATERAL_DIST, MAX_LONG_DIST, MIN_PERIOD_DURATION,
};
pub use split::split_calibration_validation;
pub use synth::{generate_synthetic_driver, StylePrior, StylePriors, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::kinematics::CfState;

/// One recorded time step of a car-following period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub v_follow: f64,
    pub v_lead: f64,
    pub gap: f64,
    pub a_follow: f64,
}

impl Sample {
    pub fn state(&self) -> CfState {
        CfState::new(self.v_follow, self.v_lead - self.v_follow, self.gap)
    }
}

/// A contiguous car-following event sampled at a fixed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfPeriod {
    pub dt: f64,
    pub samples: Vec<Sample>,
    pub driver_id: String,
}

impl CfPeriod {
    pub fn new(dt: f64, samples: Vec<Sample>, driver_id: impl Into<String>) -> Self {
        Self {
            dt,
            samples,
            driver_id: driver_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 * self.dt
    }

    pub fn initial_state(&self) -> CfState {
        self.samples[0].state()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.gap).collect()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v_follow).collect()
    }

    /// Checks the extraction invariants: long enough, in range, non-negative speeds.
    pub fn satisfies_invariants(&self) -> bool {
        self.duration() > MIN_PERIOD_DURATION
            && self.samples.iter().all(|s| {
                s.gap < MAX_LONG_DIST
                    && s.gap.is_finite()
                    && s.v_follow >= 0.0
                    && s.v_lead >= 0.0
                    && s.a_follow.is_finite()
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Aggressive,
    Conservative,
    Unknown,
}

impl std::fmt::Display for Style {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Style::Aggressive => "aggressive",
            Style::Conservative => "conservative",
            Style::Unknown => "unknown",
        })
    }
}

impl std::str::FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "aggressive" => Ok(Style::Aggressive),
            "conservative" => Ok(Style::Conservative),
            "unknown" => Ok(Style::Unknown),
            other => Err(format!("unknown style '{other}'")),
        }
    }
}

/// All periods recorded for one driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverDataset {
    pub driver_id: String,
    pub style: Style,
    pub periods: Vec<CfPeriod>,
    /// IDM parameters the follower was generated with, for synthetic drivers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<crate::baselines::IdmParams>,
}

impl DriverDataset {
    pub fn dt(&self) -> Option<f64> {
        self.periods.first().map(|p| p.dt)
    }

    pub fn sample_count(&self) -> usize {
        self.periods.iter().map(CfPeriod::len).sum()
    }

    /// Same driver with a subset of periods.
    pub fn with_periods(&self, periods: Vec<CfPeriod>) -> Self {
        Self {
            driver_id: self.driver_id.clone(),
            style: self.style,
            periods,
            ground_truth: self.ground_truth,
        }
    }
}

/// Mean time gap (gap / follower speed) over samples moving at least 1 m/s.
pub fn mean_time_gap<'a>(periods: impl IntoIterator<Item = &'a CfPeriod>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in periods.into_iter().flat_map(|p| &p.samples) {
        if s.v_follow >= 1.0 {
            sum += s.gap / s.v_follow;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
