use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_model, Quantity, RolloutErrors};
use crate::data::{split_calibration_validation, DriverDataset, Style};
use crate::error::{Error, Result};
use crate::fsutil::fmt_f64;
use crate::kinematics::CarFollowingModel;

pub const EVAL_REPORT_HEADER: &str = "model,calib_driver,valid_driver,rmspe_spacing,rmspe_speed";

/// Errors of a driver's model on the held-out part of that driver's own data.
pub fn intra_driver_validate(
    model: &dyn CarFollowingModel,
    driver: &DriverDataset,
    split_seed: u64,
) -> Result<RolloutErrors> {
    let (_, valid) = split_calibration_validation(driver, split_seed)?;
    evaluate_model(model, &valid.periods)
}

/// Square grid of errors; row = driver whose model is evaluated, column =
/// driver whose data it is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub drivers: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ErrorMatrix {
    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.values[i][i]).collect()
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .collect()
    }

    pub fn diagonal_mean(&self) -> f64 {
        mean(&self.diagonal())
    }

    /// NaN for a 1×1 matrix.
    pub fn off_diagonal_mean(&self) -> f64 {
        mean(&self.off_diagonal())
    }

    /// Mean off-diagonal error split by whether the two drivers share a
    /// style: `(same style, different style)`.
    pub fn style_group_means(&self, styles: &[Style]) -> Result<(f64, f64)> {
        if styles.len() != self.len() {
            return Err(Error::LengthMismatch(styles.len(), self.len()));
        }
        let (mut same, mut cross) = (Vec::new(), Vec::new());
        for i in 0..self.len() {
            for j in 0..self.len() {
                if i != j {
                    if styles[i] == styles[j] {
                        &mut same
                    } else {
                        &mut cross
                    }
                    .push(self.values[i][j]);
                }
            }
        }
        Ok((mean(&same), mean(&cross)))
    }

    /// CSV with the driver ids as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("driver");
        for d in &self.drivers {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (d, row) in self.drivers.iter().zip(&self.values) {
            out.push_str(d);
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterDriverResult {
    pub spacing: ErrorMatrix,
    pub speed: ErrorMatrix,
}

impl InterDriverResult {
    pub fn matrix(&self, q: Quantity) -> &ErrorMatrix {
        match q {
            Quantity::Spacing => &self.spacing,
            Quantity::Speed => &self.speed,
        }
    }
}

/// Cell (i, j) evaluates driver i's model on every period of driver j; the
/// diagonal is the intra-driver error on driver i's validation split.
pub fn inter_driver_validate(
    models: &[&dyn CarFollowingModel],
    drivers: &[DriverDataset],
    split_seed: u64,
) -> Result<InterDriverResult> {
    if models.len() != drivers.len() {
        return Err(Error::LengthMismatch(models.len(), drivers.len()));
    }
    let n = drivers.len();
    let cells: Vec<RolloutErrors> = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / n, c % n);
            if i == j {
                intra_driver_validate(models[i], &drivers[i], split_seed)
            } else {
                evaluate_model(models[i], &drivers[j].periods)
            }
        })
        .collect::<Result<_>>()?;
    let ids: Vec<String> = drivers.iter().map(|d| d.driver_id.clone()).collect();
    let grid = |q: Quantity| ErrorMatrix {
        drivers: ids.clone(),
        values: (0..n)
            .map(|i| (0..n).map(|j| cells[i * n + j].get(q)).collect())
            .collect(),
    };
    Ok(InterDriverResult {
        spacing: grid(Quantity::Spacing),
        speed: grid(Quantity::Speed),
    })
}

/// One model family: a name and one trained model per driver (same order as
/// the drivers passed to [`compare_models`]).
pub struct ModelEntry<'a> {
    pub name: String,
    pub models: Vec<&'a dyn CarFollowingModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub calib_driver: String,
    pub valid_driver: String,
    pub rmspe_spacing: f64,
    pub rmspe_speed: f64,
}

/// Mean and standard deviation across drivers. Inter-driver statistics use
/// only the off-diagonal cells and are absent with a single driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub intra_spacing_mean: f64,
    pub intra_spacing_std: f64,
    pub intra_speed_mean: f64,
    pub intra_speed_std: f64,
    pub inter_spacing_mean: Option<f64>,
    pub inter_spacing_std: Option<f64>,
    pub inter_speed_mean: Option<f64>,
    pub inter_speed_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Ordered like `summary`, then by calibration and validation driver.
    pub rows: Vec<EvalRow>,
    /// Sorted by mean intra-driver spacing error, best first.
    pub summary: Vec<ModelSummary>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVAL_REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.model,
                r.calib_driver,
                r.valid_driver,
                fmt_f64(r.rmspe_spacing),
                fmt_f64(r.rmspe_speed)
            ));
        }
        out
    }
}

/// Full intra- and inter-driver comparison of several model families.
pub fn compare_models(
    entries: &[ModelEntry<'_>],
    drivers: &[DriverDataset],
    split_seed: u64,
) -> Result<EvalReport> {
    let mut blocks = Vec::with_capacity(entries.len());
    for e in entries {
        let res = inter_driver_validate(&e.models, drivers, split_seed)?;
        let (s, v) = (&res.spacing, &res.speed);
        let multi = drivers.len() > 1;
        let summary = ModelSummary {
            model: e.name.clone(),
            intra_spacing_mean: s.diagonal_mean(),
            intra_spacing_std: std_dev(&s.diagonal()),
            intra_speed_mean: v.diagonal_mean(),
            intra_speed_std: std_dev(&v.diagonal()),
            inter_spacing_mean: multi.then(|| s.off_diagonal_mean()),
            inter_spacing_std: multi.then(|| std_dev(&s.off_diagonal())),
            inter_speed_mean: multi.then(|| v.off_diagonal_mean()),
            inter_speed_std: multi.then(|| std_dev(&v.off_diagonal())),
        };
        let n = drivers.len();
        let rows: Vec<EvalRow> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| EvalRow {
                model: e.name.clone(),
                calib_driver: drivers[i].driver_id.clone(),
                valid_driver: drivers[j].driver_id.clone(),
                rmspe_spacing: s.values[i][j],
                rmspe_speed: v.values[i][j],
            })
            .collect();
        blocks.push((summary, rows));
    }
    blocks.sort_by(|a, b| a.0.intra_spacing_mean.total_cmp(&b.0.intra_spacing_mean));
    let (summary, rows): (Vec<_>, Vec<_>) = blocks.into_iter().unzip();
    Ok(EvalReport {
        rows: rows.into_iter().flatten().collect(),
        summary,
    })
}
