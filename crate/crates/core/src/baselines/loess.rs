use serde::{Deserialize, Serialize};

use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::{CarFollowingModel, CfState, Policy, MAX_ACCEL};

pub const DEFAULT_SPAN: f64 = 0.4;

/// `(1 − u³)³` on `[0, 1]`, zero beyond.
pub fn tricube_weight(u: f64) -> f64 {
    if (0.0..1.0).contains(&u) {
        let c = 1.0 - u * u * u;
        c * c * c
    } else {
        0.0
    }
}

/// How a prediction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoessFit {
    /// Local weighted linear regression.
    Linear,
    /// The local design was singular; the weighted mean of the neighbours was used.
    WeightedMean,
    /// All neighbours coincide with the query; their mean target was used.
    DuplicateMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoessPrediction {
    pub value: f64,
    pub fit: LoessFit,
}

#[derive(Serialize, Deserialize)]
struct LoessFile {
    span: f64,
    x: Vec<[f64; 3]>,
    y: Vec<f64>,
}

/// Locally weighted linear regression of acceleration on
/// (speed, relative speed, gap). Stores its training set; distances are
/// measured on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LoessFile", into = "LoessFile")]
pub struct LoessModel {
    span: f64,
    x: Vec<[f64; 3]>,
    y: Vec<f64>,
    mean: [f64; 3],
    scale: [f64; 3],
    z: Vec<[f64; 3]>,
}

impl TryFrom<LoessFile> for LoessModel {
    type Error = Error;
    fn try_from(f: LoessFile) -> Result<Self> {
        LoessModel::new(f.x, f.y, f.span)
    }
}

impl From<LoessModel> for LoessFile {
    fn from(m: LoessModel) -> Self {
        LoessFile {
            span: m.span,
            x: m.x,
            y: m.y,
        }
    }
}

impl LoessModel {
    pub fn new(x: Vec<[f64; 3]>, y: Vec<f64>, span: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "loess needs at least 2 points, got {}",
                x.len()
            )));
        }
        if !(span > 0.0 && span <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "loess span {span} outside (0, 1]"
            )));
        }
        if x.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "loess training data must be finite".into(),
            ));
        }
        let n = x.len() as f64;
        let mut mean = [0.0; 3];
        let mut scale = [0.0; 3];
        for j in 0..3 {
            mean[j] = x.iter().map(|p| p[j]).sum::<f64>() / n;
            let var = x.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let z = x
            .iter()
            .map(|p| std::array::from_fn(|j| (p[j] - mean[j]) / scale[j]))
            .collect();
        Ok(Self {
            span,
            x,
            y,
            mean,
            scale,
            z,
        })
    }

    /// Training pairs (state, recorded acceleration) from every sample of every period.
    pub fn fit(periods: &[CfPeriod], span: f64) -> Result<Self> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for p in periods {
            for s in &p.samples {
                x.push([s.v_follow, s.v_lead - s.v_follow, s.gap]);
                y.push(s.a_follow);
            }
        }
        Self::new(x, y, span)
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Number of neighbours used per local fit, `⌈span · n⌉`.
    pub fn neighbours(&self) -> usize {
        ((self.span * self.x.len() as f64).ceil() as usize).clamp(1, self.x.len())
    }

    pub fn standardize(&self, q: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| (q[j] - self.mean[j]) / self.scale[j])
    }

    pub fn predict(&self, q: &[f64; 3]) -> LoessPrediction {
        let p = self.predict_unclamped(q);
        LoessPrediction {
            value: p.value.clamp(-MAX_ACCEL, MAX_ACCEL),
            fit: p.fit,
        }
    }

    /// Local fit without the final ±3 m/s² clamp.
    pub fn predict_unclamped(&self, q: &[f64; 3]) -> LoessPrediction {
        let zq = self.standardize(q);
        let mut idx: Vec<(f64, usize)> = self
            .z
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let d2: f64 = (0..3).map(|j| (z[j] - zq[j]).powi(2)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        let k = self.neighbours();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, by_dist);
            idx.truncate(k);
        }
        let max_dist = idx.iter().map(|p| p.0).fold(0.0, f64::max);
        if max_dist == 0.0 {
            let value = idx.iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64;
            return LoessPrediction {
                value,
                fit: LoessFit::DuplicateMean,
            };
        }

        // normal equations of the weighted fit y ≈ β0 + β·(z − zq); β0 is the prediction
        let mut ata = [[0.0; 4]; 4];
        let mut aty = [0.0; 4];
        let mut wsum = 0.0;
        let mut wy = 0.0;
        for &(d, i) in &idx {
            let w = tricube_weight(d / max_dist);
            if w == 0.0 {
                continue;
            }
            let z = &self.z[i];
            let row = [1.0, z[0] - zq[0], z[1] - zq[1], z[2] - zq[2]];
            for r in 0..4 {
                aty[r] += w * row[r] * self.y[i];
                for c in 0..4 {
                    ata[r][c] += w * row[r] * row[c];
                }
            }
            wsum += w;
            wy += w * self.y[i];
        }
        match solve4(ata, aty) {
            Some(beta) => LoessPrediction {
                value: beta[0],
                fit: LoessFit::Linear,
            },
            None => {
                let value = if wsum > 0.0 {
                    wy / wsum
                } else {
                    idx.iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
                };
                LoessPrediction {
                    value,
                    fit: LoessFit::WeightedMean,
                }
            }
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when the system is
/// numerically singular.
#[allow(clippy::needless_range_loop)]
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let tol = scale * 1e-12;
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= tol {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Fitted value at `x`, clamped to ±3 m/s².
pub fn loess_predict(m: &LoessModel, x: &[f64; 3]) -> LoessPrediction {
    m.predict(x)
}

#[derive(Debug, Clone, Copy)]
pub struct LoessPolicy<'a>(pub &'a LoessModel);

impl Policy for LoessPolicy<'_> {
    fn act(&mut self, s: &CfState) -> f64 {
        self.0.predict(&[s.v_follow, s.dv, s.gap]).value
    }
}

impl CarFollowingModel for LoessModel {
    fn policy_for(&self, _period: &CfPeriod) -> Box<dyn Policy + '_> {
        Box::new(LoessPolicy(self))
    }
}
