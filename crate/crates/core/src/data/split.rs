use rand::seq::SliceRandom;

use super::DriverDataset;
use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Fraction of a driver's periods used for calibration.
pub const CALIBRATION_FRACTION: f64 = 0.7;

/// Seeded 70/30 partition of a driver's periods into (calibration, validation).
pub fn split_calibration_validation(
    ds: &DriverDataset,
    seed: u64,
) -> Result<(DriverDataset, DriverDataset)> {
    let n = ds.periods.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "driver {} has {n} periods; the split needs at least 10",
            ds.driver_id
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, "split"));
    let n_cal = (CALIBRATION_FRACTION * n as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.periods[i].clone()).collect();
    Ok((
        ds.with_periods(pick(&order[..n_cal])),
        ds.with_periods(pick(&order[n_cal..])),
    ))
}
