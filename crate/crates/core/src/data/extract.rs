use serde::{Deserialize, Serialize};

use super::{CfPeriod, Sample};
use crate::error::{Error, Result};

/// Longitudinal distance bound, m (exclusive).
pub const MAX_LONG_DIST: f64 = 120.0;
/// Lateral distance bound, m (exclusive).
pub const MAX_LATERAL_DIST: f64 = 2.5;
/// Minimum period duration, s (exclusive).
pub const MIN_PERIOD_DURATION: f64 = 15.0;
/// A time jump larger than this between consecutive rows breaks a run.
const MAX_ROW_GAP: f64 = 1.0;

/// One row of a raw radar/CAN log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub t: f64,
    pub target_id: i64,
    pub v_follow: f64,
    pub v_lead: f64,
    pub long_dist: f64,
    pub lat_dist: f64,
    pub a_follow: f64,
}

impl RawLogRecord {
    fn in_following_range(&self) -> bool {
        self.long_dist < MAX_LONG_DIST && self.lat_dist < MAX_LATERAL_DIST
    }
}

fn validate(log: &[RawLogRecord]) -> Result<()> {
    for (i, r) in log.iter().enumerate() {
        let finite = [
            r.t,
            r.v_follow,
            r.v_lead,
            r.long_dist,
            r.lat_dist,
            r.a_follow,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::MalformedLog(format!("row {i}: non-finite value")));
        }
        if r.long_dist < 0.0 || r.lat_dist < 0.0 {
            return Err(Error::MalformedLog(format!("row {i}: negative distance")));
        }
        if i > 0 && r.t <= log[i - 1].t {
            return Err(Error::MalformedLog(format!(
                "row {i}: timestamp {} does not increase past {}",
                r.t,
                log[i - 1].t
            )));
        }
    }
    Ok(())
}

/// Nearest-sample resampling of one run onto a `dt` grid starting at its first row.
fn resample(run: &[RawLogRecord], dt: f64) -> Vec<Sample> {
    let t0 = run[0].t;
    let span = run[run.len() - 1].t - t0;
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let mut j = 0;
    (0..n)
        .map(|k| {
            let t = t0 + k as f64 * dt;
            while j + 1 < run.len() && (run[j + 1].t - t).abs() <= (run[j].t - t).abs() {
                j += 1;
            }
            let r = &run[j];
            Sample {
                v_follow: r.v_follow,
                v_lead: r.v_lead,
                gap: r.long_dist,
                a_follow: r.a_follow,
            }
        })
        .collect()
}

/// Splits a time-ordered log into car-following periods.
///
/// A period is a maximal run of consecutive rows sharing one radar target, all
/// inside the longitudinal and lateral bounds, lasting strictly longer than
/// [`MIN_PERIOD_DURATION`]. The returned periods carry an empty driver id.
pub fn extract_periods(log: &[RawLogRecord], dt: f64) -> Result<Vec<CfPeriod>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sampling step {dt} must be positive"
        )));
    }
    validate(log)?;

    let mut periods = Vec::new();
    let mut start: Option<usize> = None;
    let close_run = |from: usize, to: usize, periods: &mut Vec<CfPeriod>| {
        let run = &log[from..to];
        if run[run.len() - 1].t - run[0].t > MIN_PERIOD_DURATION {
            periods.push(CfPeriod::new(dt, resample(run, dt), ""));
        }
    };

    for (i, r) in log.iter().enumerate() {
        if let Some(s) = start {
            let prev = &log[i - 1];
            let continues = r.in_following_range()
                && r.target_id == prev.target_id
                && r.t - prev.t <= MAX_ROW_GAP;
            if !continues {
                close_run(s, i, &mut periods);
                start = None;
            }
        }
        if start.is_none() && r.in_following_range() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        close_run(s, log.len(), &mut periods);
    }
    Ok(periods)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, target_id: i64, long_dist: f64, lat_dist: f64) -> RawLogRecord {
        RawLogRecord {
            t,
            target_id,
            v_follow: 10.0,
            v_lead: 10.5,
            long_dist,
            lat_dist,
            a_follow: 0.1,
        }
    }

    /// 10 Hz rows over [0, secs].
    fn log_of(secs: f64, f: impl Fn(f64) -> (i64, f64, f64)) -> Vec<RawLogRecord> {
        let n = (secs * 10.0).round() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 / 10.0;
                let (id, lon, lat) = f(t);
                row(t, id, lon, lat)
            })
            .collect()
    }

    #[test]
    fn clean_twenty_seconds_is_one_period() {
        let log = log_of(20.0, |_| (7, 30.0, 0.4));
        let periods = extract_periods(&log, 0.1).unwrap();
        assert_eq!(periods.len(), 1);
        assert!((periods[0].duration() - 20.0).abs() < 1e-9);
        assert_eq!(periods[0].len(), 201);
    }

    #[test]
    fn lateral_violation_yields_nothing() {
        let log = log_of(30.0, |_| (7, 30.0, 3.0));
        assert!(extract_periods(&log, 0.1).unwrap().is_empty());
    }

    #[test]
    fn target_switch_splits_into_short_fragments() {
        // 28 s with a target change at 14 s: 14 s + 14 s fragments, both too short.
        let log = log_of(28.0, |t| (if t < 14.0 { 1 } else { 2 }, 30.0, 0.4));
        assert!(extract_periods(&log, 0.1).unwrap().is_empty());
    }

    #[test]
    fn target_switch_keeps_long_fragment() {
        // 40 s with the change at 14 s leaves a 26 s second fragment.
        let log = log_of(40.0, |t| (if t < 14.0 { 1 } else { 2 }, 30.0, 0.4));
        let periods = extract_periods(&log, 0.1).unwrap();
        assert_eq!(periods.len(), 1);
        assert!((periods[0].duration() - 26.0).abs() < 1e-9);
    }

    #[test]
    fn exactly_fifteen_seconds_is_rejected() {
        let log = log_of(15.0, |_| (1, 30.0, 0.4));
        assert!(extract_periods(&log, 0.1).unwrap().is_empty());
    }

    #[test]
    fn long_distance_excursion_breaks_run() {
        let log = log_of(40.0, |t| {
            (
                1,
                if (19.0..21.0).contains(&t) {
                    130.0
                } else {
                    30.0
                },
                0.4,
            )
        });
        let periods = extract_periods(&log, 0.1).unwrap();
        assert_eq!(periods.len(), 2, "18.9 s head and 19 s tail");
        assert!(periods
            .iter()
            .all(|p| p.samples.iter().all(|s| s.gap < MAX_LONG_DIST)));
    }

    #[test]
    fn unordered_timestamps_rejected() {
        let mut log = log_of(20.0, |_| (1, 30.0, 0.4));
        log.swap(3, 4);
        assert!(matches!(
            extract_periods(&log, 0.1),
            Err(Error::MalformedLog(_))
        ));
    }

    #[test]
    fn resamples_faster_logs_to_grid() {
        // 50 Hz log, 20 s
        let log: Vec<_> = (0..=1000)
            .map(|k| row(k as f64 * 0.02, 3, 25.0, 0.1))
            .collect();
        let periods = extract_periods(&log, 0.1).unwrap();
        assert_eq!(periods.len(), 1);
        assert_eq!(periods[0].len(), 201);
    }

    #[test]
    fn extraction_is_idempotent_on_reconstructed_logs() {
        let log = log_of(25.0, |t| (4, 20.0 + t, 0.3));
        let first = extract_periods(&log, 0.1).unwrap();
        assert_eq!(first.len(), 1);
        let rebuilt: Vec<_> = first[0]
            .samples
            .iter()
            .enumerate()
            .map(|(k, s)| RawLogRecord {
                t: k as f64 * 0.1,
                target_id: 1,
                v_follow: s.v_follow,
                v_lead: s.v_lead,
                long_dist: s.gap,
                lat_dist: 0.0,
                a_follow: s.a_follow,
            })
            .collect();
        let second = extract_periods(&rebuilt, 0.1).unwrap();
        assert_eq!(second, first);
    }
}
