use serde::{Deserialize, Serialize};

use super::{InputWindow, OuNoise, ReplayBuffer, TrainConfig, Transition};
use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::{CarFollowingModel, CfState, Policy, MAX_ACCEL};
use crate::nn::{Activation, Adam, DenseNet};
use crate::seed::stream_rng;

/// Actor, critic, their slowly tracking target copies, optimizer state,
/// replay memory and exploration noise.
#[derive(Debug, Clone)]
pub struct DdpgModel {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub target_actor: DenseNet,
    pub target_critic: DenseNet,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub replay: ReplayBuffer,
    pub noise: OuNoise,
    pub config: TrainConfig,
}

/// Losses from one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub critic_loss: f64,
    /// Mean critic value of the actor's own actions, before the actor update.
    pub mean_q: f64,
}

impl DdpgModel {
    /// Fresh networks initialized from `seed`. The actor maps the state window to
    /// a tanh output scaled to ±3 m/s²; the critic takes the state window plus
    /// the action divided by 3.
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, "ddpg/init");
        let d = config.state_dim();
        let actor = DenseNet::init(
            &[d, config.hidden, 1],
            &[Activation::Relu, Activation::Tanh],
            &mut rng,
        )?;
        let critic = DenseNet::init(
            &[d + 1, config.hidden, 1],
            &[Activation::Relu, Activation::Identity],
            &mut rng,
        )?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: Adam::new(actor.num_params(), config.learning_rate),
            critic_opt: Adam::new(critic.num_params(), config.learning_rate),
            replay: ReplayBuffer::new(config.replay_capacity),
            noise: OuNoise::new(config.ou_theta, config.ou_sigma),
            actor,
            critic,
            config,
        })
    }

    /// Frozen copy of the policy for evaluation or export.
    pub fn actor_model(&self) -> ActorModel {
        ActorModel {
            actor: self.actor.clone(),
            config: self.config.clone(),
        }
    }

    /// Critic regression toward `targets` on `batch`; returns the loss before the step.
    pub fn update_critic(&mut self, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(Error::LengthMismatch(batch.len(), targets.len()));
        }
        let n = batch.len() as f64;
        let mut grads = vec![0.0; self.critic.num_params()];
        let mut loss = 0.0;
        let mut input = Vec::with_capacity(self.critic.input_dim());
        for (t, y) in batch.iter().zip(targets) {
            critic_input(&mut input, &t.s, t.a / MAX_ACCEL);
            let trace = self.critic.forward_trace(&input)?;
            let err = trace.output()[0] - y;
            loss += err * err / n;
            self.critic.backward(&trace, &[2.0 * err / n], &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("critic loss is {loss}")));
        }
        self.critic_opt.step(self.critic.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Deterministic policy gradient step: moves the actor along
    /// dQ/da · da/dθ averaged over the batch. Returns mean Q before the step.
    pub fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::LengthMismatch(0, 0));
        }
        let n = batch.len() as f64;
        let mut actor_grads = vec![0.0; self.actor.num_params()];
        let mut scratch = vec![0.0; self.critic.num_params()];
        let mut input = Vec::with_capacity(self.critic.input_dim());
        let mut mean_q = 0.0;
        for t in batch {
            let at = self.actor.forward_trace(&t.s)?;
            let u = at.output()[0];
            critic_input(&mut input, &t.s, u);
            let ct = self.critic.forward_trace(&input)?;
            mean_q += ct.output()[0] / n;
            let dq_dx = self.critic.backward(&ct, &[1.0], &mut scratch)?;
            let dq_du = dq_dx[dq_dx.len() - 1];
            // gradient ascent on Q expressed as descent on −Q
            self.actor.backward(&at, &[-dq_du / n], &mut actor_grads)?;
        }
        if !mean_q.is_finite() {
            return Err(Error::Divergence(format!("critic value is {mean_q}")));
        }
        self.actor_opt.step(self.actor.params_mut(), &actor_grads)?;
        Ok(mean_q)
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.config.tau;
        self.target_actor.soft_update_from(&self.actor, tau);
        self.target_critic.soft_update_from(&self.critic, tau);
    }
}

fn critic_input(buf: &mut Vec<f64>, s: &[f64], action_unit: f64) {
    buf.clear();
    buf.extend_from_slice(s);
    buf.push(action_unit);
}

/// `clamp(3·μ(s) + noise, −3, 3)` where μ is the actor's tanh output.
pub fn select_action(actor: &DenseNet, s: &[f64], noise: f64) -> Result<f64> {
    let u = actor.forward(s)?[0];
    Ok((MAX_ACCEL * u + noise).clamp(-MAX_ACCEL, MAX_ACCEL))
}

/// Bootstrapped critic targets `r + γ·Q'(s', μ'(s'))`, or just `r` on terminal steps.
pub fn critic_targets(model: &DdpgModel, batch: &[&Transition]) -> Result<Vec<f64>> {
    let gamma = model.config.gamma;
    let mut input = Vec::with_capacity(model.target_critic.input_dim());
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.r);
            }
            let u = model.target_actor.forward(&t.s_next)?[0];
            critic_input(&mut input, &t.s_next, u);
            Ok(t.r + gamma * model.target_critic.forward(&input)?[0])
        })
        .collect()
}

/// One full update: critic toward the bootstrapped targets, actor along the
/// policy gradient, then both target networks soft-updated.
pub fn train_step(model: &mut DdpgModel, batch: &[&Transition]) -> Result<StepStats> {
    let targets = critic_targets(model, batch)?;
    let critic_loss = model.update_critic(batch, &targets)?;
    let mean_q = model.update_actor(batch)?;
    model.soft_update_targets();
    Ok(StepStats {
        critic_loss,
        mean_q,
    })
}

/// Trained actor plus the input conventions it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorModel {
    pub actor: DenseNet,
    pub config: TrainConfig,
}

impl ActorModel {
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.actor.input_dim() != self.config.state_dim() || self.actor.output_dim() != 1 {
            return Err(Error::Shape {
                expected: self.config.state_dim(),
                got: self.actor.input_dim(),
            });
        }
        Ok(())
    }

    pub fn policy(&self) -> DdpgPolicy<'_> {
        DdpgPolicy {
            actor: &self.actor,
            window: InputWindow::from_config(&self.config),
        }
    }
}

impl CarFollowingModel for ActorModel {
    fn policy_for(&self, _period: &CfPeriod) -> Box<dyn Policy + '_> {
        Box::new(self.policy())
    }
}

/// Noise-free actor policy over a sliding state window.
#[derive(Debug, Clone)]
pub struct DdpgPolicy<'a> {
    actor: &'a DenseNet,
    window: InputWindow,
}

impl Policy for DdpgPolicy<'_> {
    fn reset(&mut self, initial: &CfState) {
        self.window.reset(initial);
    }

    fn act(&mut self, s: &CfState) -> f64 {
        self.window.push(s);
        // input width is checked when the model is built or loaded
        select_action(self.actor, &self.window.features(), 0.0).unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            minibatch: 8,
            replay_start: 8,
            replay_capacity: 64,
            ..TrainConfig::default()
        }
    }

    fn tanh_head(bias: f64) -> DenseNet {
        let mut net = DenseNet::zeros(&[3, 4, 1], &[Activation::Relu, Activation::Tanh]).unwrap();
        net.layer_bias_mut(1)[0] = bias;
        net
    }

    fn random_batch(n: usize, dim: usize, seed: u64) -> Vec<Transition> {
        let mut rng = stream_rng(seed, "batch");
        (0..n)
            .map(|_| Transition {
                s: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                a: rng.gen_range(-3.0..3.0),
                r: rng.gen_range(-2.0..2.0),
                s_next: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                terminal: false,
            })
            .collect()
    }

    #[test]
    fn select_action_examples() {
        let x = [0.3, -0.1, 0.2];
        assert_eq!(select_action(&tanh_head(0.0), &x, 0.0).unwrap(), 0.0);
        // tanh saturates to exactly 1 in double precision at this bias
        assert_eq!(select_action(&tanh_head(40.0), &x, 0.0).unwrap(), 3.0);
        let b = 0.9f64.atanh();
        assert!((select_action(&tanh_head(b), &x, 0.0).unwrap() - 2.7).abs() < 1e-12);
        assert_eq!(select_action(&tanh_head(b), &x, 0.5).unwrap(), 3.0);
    }

    proptest! {
        #[test]
        fn action_always_within_bounds(bias in -50.0f64..50.0, noise in -1e6f64..1e6) {
            let a = select_action(&tanh_head(bias), &[0.1, 0.2, 0.3], noise).unwrap();
            prop_assert!((-3.0..=3.0).contains(&a));
        }
    }

    #[test]
    fn targets_with_zero_discount_equal_rewards() {
        let mut cfg = small_config();
        cfg.gamma = 1e-300;
        let m = DdpgModel::new(cfg, 1).unwrap();
        let batch = random_batch(10, 3, 2);
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = critic_targets(&m, &refs).unwrap();
        for (t, y) in batch.iter().zip(&y) {
            assert!((y - t.r).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_with_constant_critic() {
        let mut m = DdpgModel::new(small_config(), 1).unwrap();
        m.target_critic
            .params_mut()
            .iter_mut()
            .for_each(|p| *p = 0.0);
        let last = m.target_critic.num_layers() - 1;
        m.target_critic.layer_bias_mut(last)[0] = 2.0;
        let mut batch = random_batch(3, 3, 4);
        for t in &mut batch {
            t.r = 1.0;
        }
        batch[2].terminal = true;
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = critic_targets(&m, &refs).unwrap();
        assert!((y[0] - 2.8).abs() < 1e-12 && (y[1] - 2.8).abs() < 1e-12);
        assert_eq!(y[2], 1.0);
    }

    #[test]
    fn tau_one_copies_mains_into_targets() {
        let mut cfg = small_config();
        cfg.tau = 1.0;
        let mut m = DdpgModel::new(cfg, 5).unwrap();
        let batch = random_batch(8, 3, 6);
        let refs: Vec<&Transition> = batch.iter().collect();
        train_step(&mut m, &refs).unwrap();
        assert_eq!(m.actor.params(), m.target_actor.params());
        assert_eq!(m.critic.params(), m.target_critic.params());
    }

    #[test]
    fn targets_untouched_until_soft_update() {
        let mut m = DdpgModel::new(small_config(), 5).unwrap();
        let before = m.target_actor.clone();
        let batch = random_batch(8, 3, 6);
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = critic_targets(&m, &refs).unwrap();
        m.update_critic(&refs, &y).unwrap();
        m.update_actor(&refs).unwrap();
        assert_eq!(m.target_actor, before);
        assert_ne!(m.actor, before);
    }

    #[test]
    fn critic_regression_loss_decreases() {
        let mut m = DdpgModel::new(small_config(), 9).unwrap();
        let batch = random_batch(64, 3, 10);
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets: Vec<f64> = batch
            .iter()
            .map(|t| 0.5 * t.s[0] - t.s[1] + 0.3 * t.a)
            .collect();
        let losses: Vec<f64> = (0..50)
            .map(|_| m.update_critic(&refs, &targets).unwrap())
            .collect();
        let upticks = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(upticks <= 5, "{upticks} upticks");
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn actor_update_raises_q() {
        // critic Q = 5·u only rewards larger actions
        let mut m = DdpgModel::new(small_config(), 11).unwrap();
        m.critic = DenseNet::zeros(&[4, 1], &[Activation::Identity]).unwrap();
        m.critic.layer_weights_mut(0)[3] = 5.0;
        let batch = random_batch(16, 3, 12);
        let refs: Vec<&Transition> = batch.iter().collect();
        let q0 = m.update_actor(&refs).unwrap();
        let mut q = q0;
        for _ in 0..20 {
            q = m.update_actor(&refs).unwrap();
        }
        assert!(q > q0);
    }

    #[test]
    fn policy_ignores_states_older_than_window() {
        let cfg = TrainConfig {
            rt_window: 10,
            hidden: 12,
            ..small_config()
        };
        let model = DdpgModel::new(cfg, 13).unwrap().actor_model();
        let mut rng = stream_rng(14, "states");
        let states: Vec<CfState> = (0..25)
            .map(|_| {
                CfState::new(
                    rng.gen_range(0.0..20.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(5.0..60.0),
                )
            })
            .collect();
        let run = |hist: &[CfState]| {
            let mut p = model.policy();
            p.reset(&hist[0]);
            hist.iter().map(|s| p.act(s)).last().unwrap()
        };
        let mut altered = states.clone();
        for s in altered.iter_mut().take(15) {
            s.gap += 7.0;
        }
        assert_eq!(run(&states), run(&altered));
        altered[15].gap += 7.0;
        assert_ne!(run(&states), run(&altered));
    }

    #[test]
    fn model_is_sendable() {
        fn assert_send<T: Send + Sync>() {}
        assert_send::<DdpgModel>();
        assert_send::<ActorModel>();
    }
}
