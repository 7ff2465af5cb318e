use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::{CarFollowingModel, CfState, Policy, MAX_ACCEL};
use crate::nn::{Activation, Adam, DenseNet};
use crate::seed::stream_rng;

/// Divisors for (speed, relative speed, gap), shared with the DDPG actor.
pub const NNA_STATE_SCALE: [f64; 3] = [30.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnaConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub epochs: usize,
}

impl Default for NnaConfig {
    fn default() -> Self {
        Self {
            hidden: 30,
            learning_rate: 1e-3,
            minibatch: 256,
            epochs: 100,
        }
    }
}

/// Feed-forward regression of recorded acceleration on the current state,
/// with the same shape as the speed-reward DDPG actor (tanh head scaled to ±3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnaModel {
    pub net: DenseNet,
    pub state_scale: [f64; 3],
}

impl NnaModel {
    pub fn init(hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, "nna/init");
        let net = DenseNet::init(
            &[3, hidden, 1],
            &[Activation::Relu, Activation::Tanh],
            &mut rng,
        )?;
        Ok(Self {
            net,
            state_scale: NNA_STATE_SCALE,
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.net.input_dim() != 3 || self.net.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 3,
                got: self.net.input_dim(),
            });
        }
        Ok(())
    }

    fn features(&self, x: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| x[j] / self.state_scale[j])
    }

    /// Predicted acceleration for raw (speed, relative speed, gap).
    pub fn predict(&self, x: &[f64; 3]) -> f64 {
        let u = self
            .net
            .forward(&self.features(x))
            .map(|o| o[0])
            .unwrap_or(0.0);
        (MAX_ACCEL * u).clamp(-MAX_ACCEL, MAX_ACCEL)
    }

    /// Mean squared acceleration error over `pairs`.
    pub fn loss(&self, pairs: &[([f64; 3], f64)]) -> f64 {
        pairs
            .iter()
            .map(|(x, y)| (self.predict(x) - y).powi(2))
            .sum::<f64>()
            / pairs.len().max(1) as f64
    }
}

/// (state, recorded acceleration) for every sample of every period.
pub fn training_pairs(periods: &[CfPeriod]) -> Vec<([f64; 3], f64)> {
    periods
        .iter()
        .flat_map(|p| {
            p.samples
                .iter()
                .map(|s| ([s.v_follow, s.v_lead - s.v_follow, s.gap], s.a_follow))
        })
        .collect()
}

/// Minibatch Adam on mean squared acceleration error. Targets outside the
/// ±3 m/s² output range are clamped. Returns the model and the training loss
/// after each epoch.
pub fn nna_fit(
    pairs: &[([f64; 3], f64)],
    cfg: &NnaConfig,
    seed: u64,
) -> Result<(NnaModel, Vec<f64>)> {
    if cfg.minibatch == 0 || pairs.len() < cfg.minibatch {
        return Err(Error::InsufficientData(format!(
            "need at least {} training pairs, got {}",
            cfg.minibatch,
            pairs.len()
        )));
    }
    let mut model = NnaModel::init(cfg.hidden, seed)?;
    let mut opt = Adam::new(model.net.num_params(), cfg.learning_rate);
    let mut rng = stream_rng(seed, "nna/shuffle");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grads = vec![0.0; model.net.num_params()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let n = chunk.len() as f64;
            for &i in chunk {
                let (x, y) = &pairs[i];
                let trace = model.net.forward_trace(&model.features(x))?;
                let pred = MAX_ACCEL * trace.output()[0];
                let err = pred - y.clamp(-MAX_ACCEL, MAX_ACCEL);
                model
                    .net
                    .backward(&trace, &[2.0 * err * MAX_ACCEL / n], &mut grads)?;
            }
            opt.step(model.net.params_mut(), &grads)?;
        }
        let loss = model.loss(pairs);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("training loss is {loss}")));
        }
        history.push(loss);
    }
    Ok((model, history))
}

/// Fits on an entire set of periods and returns the trained model.
pub fn nna_fit_periods(
    periods: &[CfPeriod],
    cfg: &NnaConfig,
    seed: u64,
) -> Result<(NnaModel, Vec<f64>)> {
    nna_fit(&training_pairs(periods), cfg, seed)
}

#[derive(Debug, Clone, Copy)]
pub struct NnaPolicy<'a>(pub &'a NnaModel);

impl Policy for NnaPolicy<'_> {
    fn act(&mut self, s: &CfState) -> f64 {
        self.0.predict(&[s.v_follow, s.dv, s.gap])
    }
}

impl CarFollowingModel for NnaModel {
    fn policy_for(&self, _period: &CfPeriod) -> Box<dyn Policy + '_> {
        Box::new(NnaPolicy(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_states(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = stream_rng(seed, "x");
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(0.0..25.0),
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(2.0..80.0),
                ]
            })
            .collect()
    }

    #[test]
    fn learns_constant_target() {
        let pairs: Vec<_> = random_states(512, 1)
            .into_iter()
            .map(|x| (x, 0.5))
            .collect();
        let cfg = NnaConfig {
            epochs: 150,
            ..NnaConfig::default()
        };
        let (m, _) = nna_fit(&pairs, &cfg, 2).unwrap();
        for x in random_states(20, 3) {
            assert!((m.predict(&x) - 0.5).abs() <= 0.05, "{}", m.predict(&x));
        }
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let mut m = NnaModel::init(30, 1).unwrap();
        m.net.layer_weights_mut(1).iter_mut().for_each(|w| *w = 0.0);
        m.net.layer_bias_mut(1)[0] = 0.0;
        for x in random_states(10, 4) {
            assert_eq!(m.predict(&x), 0.0);
        }
    }

    #[test]
    fn held_out_loss_drops_on_linear_task() {
        let f = |x: &[f64; 3]| 0.04 * x[0] + 0.3 * x[1] - 0.01 * x[2];
        let train: Vec<_> = random_states(1024, 5)
            .into_iter()
            .map(|x| (x, f(&x)))
            .collect();
        let held: Vec<_> = random_states(200, 6)
            .into_iter()
            .map(|x| (x, f(&x)))
            .collect();
        let cfg = NnaConfig {
            epochs: 40,
            ..NnaConfig::default()
        };
        let before = NnaModel::init(cfg.hidden, 7).unwrap().loss(&held);
        let (m, hist) = nna_fit(&train, &cfg, 7).unwrap();
        assert!(
            m.loss(&held) < 0.5 * before,
            "{} vs {before}",
            m.loss(&held)
        );
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let pairs: Vec<_> = random_states(100, 1)
            .into_iter()
            .map(|x| (x, 0.0))
            .collect();
        assert!(matches!(
            nna_fit(&pairs, &NnaConfig::default(), 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn deterministic() {
        let pairs: Vec<_> = random_states(300, 1)
            .into_iter()
            .map(|x| (x, 0.1 * x[1]))
            .collect();
        let cfg = NnaConfig {
            epochs: 3,
            ..NnaConfig::default()
        };
        assert_eq!(
            nna_fit(&pairs, &cfg, 9).unwrap().0,
            nna_fit(&pairs, &cfg, 9).unwrap().0
        );
    }
}
