use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{mean_time_gap, DriverDataset, Style};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

const RESTARTS: usize = 10;
const MAX_ITERS: usize = 100;
const KMEANS_SEED: u64 = 0x5EED;

/// (mean, std) of speed, gap and relative speed pooled over all of a driver's samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleFeatures(pub [f64; 6]);

pub fn style_features(ds: &DriverDataset) -> StyleFeatures {
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let mut n = 0.0;
    for s in ds.periods.iter().flat_map(|p| &p.samples) {
        let x = [s.v_follow, s.gap, s.v_lead - s.v_follow];
        for i in 0..3 {
            sum[i] += x[i];
            sq[i] += x[i] * x[i];
        }
        n += 1.0;
    }
    let mut f = [0.0; 6];
    for i in 0..3 {
        let mean = sum[i] / n;
        f[2 * i] = mean;
        f[2 * i + 1] = (sq[i] / n - mean * mean).max(0.0).sqrt();
    }
    StyleFeatures(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    /// Objective after each assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(p, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// k-means++ seeding.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            d.iter()
                .position(|&w| {
                    r -= w;
                    r <= 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansResult {
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            changed |= labels[i] != j;
            labels[i] = j;
            wcss += d;
        }
        history.push(wcss);
        if !changed {
            break;
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == j)
                .map(|(p, _)| p)
                .collect();
            // an emptied cluster keeps its previous centroid
            if !members.is_empty() {
                for d in 0..dim {
                    c[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
    let wcss = *history.last().unwrap();
    KMeansResult {
        labels,
        centroids,
        wcss,
        history,
    }
}

/// Lloyd's algorithm with k-means++ restarts; keeps the lowest-WCSS run.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} points for k = {k}",
            points.len()
        )));
    }
    let mut rng = stream_rng(seed, "kmeans");
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, seed_centroids(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Labels each driver aggressive or conservative by 2-means on standardized
/// [`StyleFeatures`]; the cluster with the smaller mean time gap is aggressive.
pub fn cluster_driving_styles(datasets: &[DriverDataset]) -> Result<Vec<Style>> {
    if datasets.len() < 2 {
        return Err(Error::InsufficientData(
            "clustering needs at least 2 drivers".into(),
        ));
    }
    let feats: Vec<[f64; 6]> = datasets.iter().map(|d| style_features(d).0).collect();
    let n = feats.len() as f64;
    let mut points = vec![vec![0.0; 6]; feats.len()];
    let mut any_spread = false;
    for d in 0..6 {
        let mean = feats.iter().map(|f| f[d]).sum::<f64>() / n;
        let sd = (feats.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            any_spread = true;
            for (p, f) in points.iter_mut().zip(&feats) {
                p[d] = (f[d] - mean) / sd;
            }
        }
    }
    if !any_spread {
        return Err(Error::ClusteringDegenerate(
            "all drivers have identical style features".into(),
        ));
    }

    let result = kmeans(&points, 2, RESTARTS, KMEANS_SEED)?;
    let cluster_tg: Vec<f64> = (0..2)
        .map(|j| {
            let tgs: Vec<f64> = datasets
                .iter()
                .zip(&result.labels)
                .filter(|(_, &l)| l == j)
                .map(|(d, _)| mean_time_gap(&d.periods))
                .filter(|x| x.is_finite())
                .collect();
            if tgs.is_empty() {
                f64::INFINITY
            } else {
                tgs.iter().sum::<f64>() / tgs.len() as f64
            }
        })
        .collect();
    let aggressive = if cluster_tg[0] <= cluster_tg[1] { 0 } else { 1 };
    Ok(result
        .labels
        .iter()
        .map(|&l| {
            if l == aggressive {
                Style::Aggressive
            } else {
                Style::Conservative
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_driver, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn recovers_generator_styles() {
        let cfg = SynthConfig::default();
        let drivers: Vec<DriverDataset> = (0..20)
            .map(|i| {
                let style = if i % 2 == 0 {
                    Style::Aggressive
                } else {
                    Style::Conservative
                };
                generate_synthetic_driver(&cfg, style, 30, 100 + i, &format!("d{i:02}")).unwrap()
            })
            .collect();
        let labels = cluster_driving_styles(&drivers).unwrap();
        let hits = labels
            .iter()
            .zip(&drivers)
            .filter(|(l, d)| **l == d.style)
            .count();
        assert!(hits >= 18, "{hits}/20 labels match");
    }

    #[test]
    fn identical_drivers_are_degenerate() {
        let d = generate_synthetic_driver(&SynthConfig::default(), Style::Aggressive, 3, 5, "x")
            .unwrap();
        let err = cluster_driving_styles(&[d.clone(), d.clone(), d]).unwrap_err();
        assert!(matches!(err, Error::ClusteringDegenerate(_)));
    }

    #[test]
    fn single_driver_rejected() {
        let d = generate_synthetic_driver(&SynthConfig::default(), Style::Aggressive, 1, 5, "x")
            .unwrap();
        assert!(cluster_driving_styles(&[d]).is_err());
    }

    proptest! {
        #[test]
        fn lloyd_objective_never_increases(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 4..40),
            k in 1usize..4,
            seed in any::<u64>(),
        ) {
            let r = kmeans(&pts, k.min(pts.len()), 1, seed).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
            }
        }
    }
}
