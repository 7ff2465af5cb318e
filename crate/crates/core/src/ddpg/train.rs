use log::{debug, info};
use rand_chacha::ChaCha8Rng;

use super::agent::{select_action, train_step, DdpgModel};
use super::{reward, InputWindow, TrainConfig, Transition, COLLISION_REWARD, OBS_FLOOR};
use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::eval::evaluate_model;
use crate::fsutil::fmt_f64;
use crate::kinematics::step_state;
use crate::nn::DenseNet;
use crate::seed::stream_rng;

pub const LEARNING_CURVE_HEADER: &str = "episode,reward_mean,rmspe_train,rmspe_test";

/// End-of-episode record. `rmspe_test` is NaN when no validation periods were given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward_mean: f64,
    pub rmspe_train: f64,
    pub rmspe_test: f64,
}

impl CurvePoint {
    fn score(&self) -> f64 {
        if self.rmspe_test.is_nan() {
            self.rmspe_train
        } else {
            self.rmspe_train + self.rmspe_test
        }
    }
}

pub fn curves_to_csv(curves: &[CurvePoint]) -> String {
    let mut out = String::from(LEARNING_CURVE_HEADER);
    out.push('\n');
    for c in curves {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.episode,
            fmt_f64(c.reward_mean),
            fmt_f64(c.rmspe_train),
            fmt_f64(c.rmspe_test)
        ));
    }
    out
}

/// Trains a fresh agent on `calib`, rolling out every calibration period once
/// per episode with exploration noise. After each episode the noise-free
/// policy's spacing RMSPE is measured on `calib` and `valid`; the returned
/// model carries the networks of the episode with the lowest sum of the two.
pub fn train(
    calib: &[CfPeriod],
    valid: &[CfPeriod],
    config: TrainConfig,
    seed: u64,
) -> Result<(DdpgModel, Vec<CurvePoint>)> {
    let mut model = DdpgModel::new(config, seed)?;
    let curves = run_training(&mut model, calib, valid, seed)?;
    Ok((model, curves))
}

/// Continues training an existing agent on new data. The replay buffer is
/// emptied first so only the new driver's transitions are replayed; network
/// weights and optimizer moments carry over. `config` must keep the network
/// shape of `model`.
pub fn retrain(
    mut model: DdpgModel,
    calib: &[CfPeriod],
    valid: &[CfPeriod],
    config: &TrainConfig,
    seed: u64,
) -> Result<(DdpgModel, Vec<CurvePoint>)> {
    config.validate()?;
    let old = &model.config;
    if config.rt_window != old.rt_window
        || config.hidden != old.hidden
        || config.state_scale != old.state_scale
    {
        return Err(Error::InvalidConfig(
            "retraining cannot change the network shape or input scaling".into(),
        ));
    }
    model.replay = super::ReplayBuffer::new(config.replay_capacity);
    model.noise = super::OuNoise::new(config.ou_theta, config.ou_sigma);
    model.actor_opt.learning_rate = config.learning_rate;
    model.critic_opt.learning_rate = config.learning_rate;
    model.config = config.clone();
    let curves = run_training(&mut model, calib, valid, seed)?;
    Ok((model, curves))
}

struct Snapshot {
    actor: DenseNet,
    critic: DenseNet,
    target_actor: DenseNet,
    target_critic: DenseNet,
}

fn run_training(
    model: &mut DdpgModel,
    calib: &[CfPeriod],
    valid: &[CfPeriod],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if calib.is_empty() {
        return Err(Error::InsufficientData(
            "no calibration periods to train on".into(),
        ));
    }
    if let Some(p) = calib.iter().find(|p| p.len() < 2) {
        return Err(Error::EmptyPeriod(p.len()));
    }
    let mut explore_rng = stream_rng(seed, "ddpg/explore");
    let mut replay_rng = stream_rng(seed, "ddpg/replay");
    let mut curves = Vec::with_capacity(model.config.episodes);
    let mut best: Option<(f64, Snapshot)> = None;

    for episode in 1..=model.config.episodes {
        let mut reward_sum = 0.0;
        let mut steps = 0usize;
        for period in calib {
            let (r, n) = run_period(model, period, &mut explore_rng, &mut replay_rng)?;
            reward_sum += r;
            steps += n;
        }
        let frozen = model.actor_model();
        let rmspe_train = evaluate_model(&frozen, calib)?.spacing;
        let rmspe_test = if valid.is_empty() {
            f64::NAN
        } else {
            evaluate_model(&frozen, valid)?.spacing
        };
        let point = CurvePoint {
            episode,
            reward_mean: reward_sum / steps.max(1) as f64,
            rmspe_train,
            rmspe_test,
        };
        debug!(
            "episode {episode}: reward {:.4} train {:.4} test {:.4} replay {}",
            point.reward_mean,
            rmspe_train,
            rmspe_test,
            model.replay.len()
        );
        let score = point.score();
        if score.is_finite() && best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((
                score,
                Snapshot {
                    actor: model.actor.clone(),
                    critic: model.critic.clone(),
                    target_actor: model.target_actor.clone(),
                    target_critic: model.target_critic.clone(),
                },
            ));
        }
        curves.push(point);
    }
    if let Some((score, snap)) = best {
        info!("best snapshot score {score:.4}");
        model.actor = snap.actor;
        model.critic = snap.critic;
        model.target_actor = snap.target_actor;
        model.target_critic = snap.target_critic;
    }
    Ok(curves)
}

/// One exploratory rollout over `period`, learning online once the replay
/// buffer holds `replay_start` transitions. Returns (reward sum, steps).
fn run_period(
    model: &mut DdpgModel,
    period: &CfPeriod,
    explore_rng: &mut ChaCha8Rng,
    replay_rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let cfg = model.config.clone();
    let mut window = InputWindow::from_config(&cfg);
    let mut state = period.initial_state();
    window.reset(&state);
    let mut x = window.features();
    model.noise.reset();
    let mut reward_sum = 0.0;
    let mut steps = 0;
    for k in 0..period.len() - 1 {
        let noise = model.noise.sample(explore_rng);
        let a = select_action(&model.actor, &x, noise)?;
        let next = step_state(&state, a, period.samples[k + 1].v_lead, period.dt);
        let collided = next.gap <= 0.0;
        let r = if collided {
            COLLISION_REWARD
        } else {
            let obs = cfg
                .reward_mode
                .pick(&period.samples[k + 1].state())
                .max(OBS_FLOOR);
            reward(cfg.reward_mode.pick(&next), obs)?
        };
        window.push(&next);
        let x_next = window.features();
        model.replay.push(Transition {
            s: x,
            a,
            r,
            s_next: x_next.clone(),
            terminal: collided,
        });
        reward_sum += r;
        steps += 1;
        if model.replay.len() >= cfg.replay_start.max(cfg.minibatch) {
            // the buffer is moved out so the batch can borrow it while the networks update
            let replay = std::mem::replace(&mut model.replay, super::ReplayBuffer::new(1));
            let batch = replay.sample(replay_rng, cfg.minibatch);
            let res = train_step(model, &batch);
            model.replay = replay;
            res?;
        }
        if collided {
            break;
        }
        state = next;
        x = x_next;
    }
    Ok((reward_sum, steps))
}
