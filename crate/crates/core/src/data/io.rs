//! Period CSV files, raw log CSV files, and the dataset manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CfPeriod, DriverDataset, RawLogRecord, Sample, Style};
use crate::baselines::IdmParams;
use crate::error::{Error, Result};
use crate::fsutil::{numeric_csv, read_json, write_atomic, write_json};

pub const PERIOD_HEADER: &str = "t,v_follow,v_lead,gap,a_follow";
pub const RAW_LOG_HEADER: &str = "t,target_id,v_follow,v_lead,long_dist,lat_dist,a_follow";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDriver {
    pub driver_id: String,
    pub style: Style,
    /// Period files relative to the manifest's directory.
    pub periods: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<IdmParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dt: f64,
    pub drivers: Vec<ManifestDriver>,
}

#[derive(Debug, Deserialize)]
struct PeriodRow {
    t: f64,
    v_follow: f64,
    v_lead: f64,
    gap: f64,
    a_follow: f64,
}

pub fn period_to_csv(period: &CfPeriod) -> String {
    let rows: Vec<[f64; 5]> = period
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            [
                k as f64 * period.dt,
                s.v_follow,
                s.v_lead,
                s.gap,
                s.a_follow,
            ]
        })
        .collect();
    numeric_csv(PERIOD_HEADER, rows.iter().map(|r| &r[..]))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &str) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::format(path, e))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.join(",") != expected {
        return Err(Error::format(
            path,
            format!("expected header '{expected}', found '{}'", got.join(",")),
        ));
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })
}

/// Reads a period CSV. The sampling step is taken from `dt` if given,
/// otherwise inferred from the first two timestamps.
pub fn read_period_csv(path: &Path, dt: Option<f64>, driver_id: &str) -> Result<CfPeriod> {
    let mut rdr = open_csv(path)?;
    check_header(path, &mut rdr, PERIOD_HEADER)?;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for row in rdr.deserialize::<PeriodRow>() {
        let r = row.map_err(|e| Error::format(path, e))?;
        times.push(r.t);
        samples.push(Sample {
            v_follow: r.v_follow,
            v_lead: r.v_lead,
            gap: r.gap,
            a_follow: r.a_follow,
        });
    }
    let dt = match dt {
        Some(dt) => dt,
        None if times.len() >= 2 => ((times[1] - times[0]) * 1e9).round() / 1e9,
        None => {
            return Err(Error::format(
                path,
                "cannot infer sampling step from fewer than 2 rows",
            ))
        }
    };
    Ok(CfPeriod::new(dt, samples, driver_id))
}

pub fn read_raw_log_csv(path: &Path) -> Result<Vec<RawLogRecord>> {
    let mut rdr = open_csv(path)?;
    check_header(path, &mut rdr, RAW_LOG_HEADER)?;
    rdr.deserialize::<RawLogRecord>()
        .map(|r| r.map_err(|e| Error::format(path, e)))
        .collect()
}

pub fn raw_log_to_csv(log: &[RawLogRecord]) -> String {
    let mut out = String::from(RAW_LOG_HEADER);
    out.push('\n');
    for r in log {
        let nums =
            [r.v_follow, r.v_lead, r.long_dist, r.lat_dist, r.a_follow].map(crate::fsutil::fmt_f64);
        out.push_str(&format!(
            "{},{},{}\n",
            crate::fsutil::fmt_f64(r.t),
            r.target_id,
            nums.join(",")
        ));
    }
    out
}

/// Writes one folder per driver plus `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, drivers: &[DriverDataset]) -> Result<DatasetManifest> {
    let dt = drivers
        .iter()
        .find_map(DriverDataset::dt)
        .unwrap_or(crate::kinematics::DEFAULT_DT);
    let mut manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        dt,
        drivers: Vec::new(),
    };
    for ds in drivers {
        let mut files = Vec::with_capacity(ds.periods.len());
        for (i, p) in ds.periods.iter().enumerate() {
            let rel = format!("{}/period_{i:03}.csv", ds.driver_id);
            write_atomic(&dir.join(&rel), period_to_csv(p).as_bytes())?;
            files.push(rel);
        }
        manifest.drivers.push(ManifestDriver {
            driver_id: ds.driver_id.clone(),
            style: ds.style,
            periods: files,
            ground_truth: ds.ground_truth,
        });
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            format!("unsupported manifest version {}", manifest.format_version),
        ));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<DriverDataset>> {
    let manifest = read_manifest(dir)?;
    manifest
        .drivers
        .iter()
        .map(|d| {
            let periods = d
                .periods
                .iter()
                .map(|rel| read_period_csv(&dir.join(rel), Some(manifest.dt), &d.driver_id))
                .collect::<Result<Vec<_>>>()?;
            Ok(DriverDataset {
                driver_id: d.driver_id.clone(),
                style: d.style,
                periods,
                ground_truth: d.ground_truth,
            })
        })
        .collect()
}

/// Reads a single driver out of a dataset directory.
pub fn read_driver(dir: &Path, driver_id: &str) -> Result<DriverDataset> {
    read_dataset(dir)?
        .into_iter()
        .find(|d| d.driver_id == driver_id)
        .ok_or_else(|| Error::format(dir.join(MANIFEST_FILE), format!("no driver '{driver_id}'")))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_driver, SynthConfig};

    #[test]
    fn dataset_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let drivers = vec![
            generate_synthetic_driver(&cfg, Style::Aggressive, 3, 1, "d01").unwrap(),
            generate_synthetic_driver(&cfg, Style::Conservative, 2, 2, "d02").unwrap(),
        ];
        write_dataset(dir.path(), &drivers).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, drivers);
    }

    #[test]
    fn wrong_header_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,speed\n0,1\n").unwrap();
        let err = read_period_csv(&p, None, "x").unwrap_err().to_string();
        assert!(
            err.contains("bad.csv") && err.contains("expected header"),
            "{err}"
        );
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn raw_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log: Vec<RawLogRecord> = (0..5)
            .map(|k| RawLogRecord {
                t: k as f64 * 0.1,
                target_id: 42,
                v_follow: 10.0,
                v_lead: 11.0,
                long_dist: 20.0,
                lat_dist: 0.5,
                a_follow: -0.25,
            })
            .collect();
        let p = dir.path().join("raw.csv");
        std::fs::write(&p, raw_log_to_csv(&log)).unwrap();
        assert_eq!(read_raw_log_csv(&p).unwrap(), log);
    }
}
