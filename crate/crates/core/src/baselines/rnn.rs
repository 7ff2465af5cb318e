use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::{step_state, CarFollowingModel, CfState, Policy, MAX_ACCEL};
use crate::seed::stream_rng;

pub const RNN_HIDDEN: usize = 60;
const RNN_FORMAT_VERSION: u32 = 1;

/// Observed gaps are floored here in the normalized error so near-contact
/// samples cannot dominate the objective.
const GAP_OBS_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Backpropagation-through-time window, in steps.
    pub truncation: usize,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            hidden: RNN_HIDDEN,
            learning_rate: 1e-3,
            epochs: 30,
            truncation: 50,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RnnFile {
    format_version: u32,
    state_scale: [f64; 3],
    input_weights: Vec<Vec<f64>>,
    input_bias: Vec<f64>,
    recurrent_weights: Vec<Vec<f64>>,
    output_weights: Vec<f64>,
    output_bias: f64,
}

/// Elman-style recurrent acceleration model:
/// `h' = relu(W_h·h + W_i·x + b_i)`, `a = clamp(w_o·h' + b_o, ±3)`.
///
/// Parameters live in one flat vector laid out as `W_i` (hidden × 3),
/// `b_i`, `W_h` (hidden × hidden), `w_o`, `b_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RnnFile", into = "RnnFile")]
pub struct RnnModel {
    hidden: usize,
    pub state_scale: [f64; 3],
    params: Vec<f64>,
}

impl TryFrom<RnnFile> for RnnModel {
    type Error = Error;
    fn try_from(f: RnnFile) -> Result<Self> {
        if f.format_version != RNN_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported recurrent model version {}",
                f.format_version
            )));
        }
        let h = f.input_bias.len();
        let ok = h > 0
            && f.input_weights.len() == h
            && f.input_weights.iter().all(|r| r.len() == 3)
            && f.recurrent_weights.len() == h
            && f.recurrent_weights.iter().all(|r| r.len() == h)
            && f.output_weights.len() == h;
        if !ok {
            return Err(Error::Shape {
                expected: h,
                got: f.output_weights.len(),
            });
        }
        let mut params = Vec::with_capacity(Self::param_count(h));
        params.extend(f.input_weights.into_iter().flatten());
        params.extend(f.input_bias);
        params.extend(f.recurrent_weights.into_iter().flatten());
        params.extend(f.output_weights);
        params.push(f.output_bias);
        Ok(Self {
            hidden: h,
            state_scale: f.state_scale,
            params,
        })
    }
}

impl From<RnnModel> for RnnFile {
    fn from(m: RnnModel) -> Self {
        let h = m.hidden;
        RnnFile {
            format_version: RNN_FORMAT_VERSION,
            state_scale: m.state_scale,
            input_weights: m.w_i().chunks(3).map(<[f64]>::to_vec).collect(),
            input_bias: m.b_i().to_vec(),
            recurrent_weights: m.w_h().chunks(h).map(<[f64]>::to_vec).collect(),
            output_weights: m.w_o().to_vec(),
            output_bias: m.b_o(),
        }
    }
}

impl RnnModel {
    fn param_count(h: usize) -> usize {
        3 * h + h + h * h + h + 1
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            state_scale: [30.0, 10.0, 100.0],
            params: vec![0.0; Self::param_count(hidden)],
        }
    }

    /// Input and recurrent weights uniform in ±1/√fan_in (recurrent halved),
    /// output weights in ±3e-3, biases zero.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut m = Self::zeros(hidden);
        let mut rng = stream_rng(seed, "rnn/init");
        let bi = 1.0 / 3f64.sqrt();
        let bh = 0.5 / (hidden as f64).sqrt();
        m.w_i_mut()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bi..bi));
        m.w_h_mut()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bh..bh));
        m.w_o_mut()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-3e-3..3e-3));
        m
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 5] {
        let h = self.hidden;
        let w_i = 0;
        let b_i = w_i + 3 * h;
        let w_h = b_i + h;
        let w_o = w_h + h * h;
        let b_o = w_o + h;
        [w_i, b_i, w_h, w_o, b_o]
    }

    pub fn w_i(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[0]..o[1]]
    }
    pub fn b_i(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[1]..o[2]]
    }
    pub fn w_h(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[2]..o[3]]
    }
    pub fn w_o(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[3]..o[4]]
    }
    pub fn b_o(&self) -> f64 {
        self.params[self.offsets()[4]]
    }
    pub fn w_i_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[0]..o[1]]
    }
    pub fn b_i_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[1]..o[2]]
    }
    pub fn w_h_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[2]..o[3]]
    }
    pub fn w_o_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[3]..o[4]]
    }
    pub fn set_b_o(&mut self, b: f64) {
        let o = self.offsets()[4];
        self.params[o] = b;
    }

    /// Scaled network input for a kinematic state.
    pub fn encode(&self, s: &CfState) -> [f64; 3] {
        [
            s.v_follow / self.state_scale[0],
            s.dv / self.state_scale[1],
            s.gap / self.state_scale[2],
        ]
    }

    /// Hidden update and unclamped output.
    fn cell(&self, h: &[f64], input: &[f64; 3]) -> (Vec<f64>, f64) {
        let n = self.hidden;
        let (w_i, b_i, w_h, w_o) = (self.w_i(), self.b_i(), self.w_h(), self.w_o());
        let h_next: Vec<f64> = (0..n)
            .map(|j| {
                let rec: f64 = w_h[j * n..(j + 1) * n]
                    .iter()
                    .zip(h)
                    .map(|(w, x)| w * x)
                    .sum();
                let inp: f64 = (0..3).map(|k| w_i[j * 3 + k] * input[k]).sum();
                (rec + inp + b_i[j]).max(0.0)
            })
            .collect();
        let out = self.b_o() + w_o.iter().zip(&h_next).map(|(w, x)| w * x).sum::<f64>();
        (h_next, out)
    }

    /// Runs one segment of a rollout from the given hidden and kinematic state.
    /// Accumulates the gradient of `Σ (gap − obs)² / obs² / norm` into `grads`
    /// when given; gradients do not flow into the starting states.
    #[allow(clippy::too_many_arguments)]
    fn segment(
        &self,
        period: &CfPeriod,
        start: usize,
        steps: usize,
        h0: Vec<f64>,
        s0: CfState,
        norm: f64,
        grads: Option<&mut [f64]>,
    ) -> Segment {
        let dt = period.dt;
        let mut hs = vec![h0];
        let mut states = vec![s0];
        let mut inputs = Vec::with_capacity(steps);
        let mut outs = Vec::with_capacity(steps);
        let mut free = Vec::with_capacity(steps);
        let mut obs = Vec::with_capacity(steps);
        let mut loss = 0.0;
        let mut collided = false;
        for k in start..(start + steps).min(period.len() - 1) {
            let s = *states.last().unwrap();
            let x = self.encode(&s);
            let (h, o) = self.cell(hs.last().unwrap(), &x);
            let a = o.clamp(-MAX_ACCEL, MAX_ACCEL);
            let next = step_state(&s, a, period.samples[k + 1].v_lead, dt);
            let g_obs = period.samples[k + 1].gap.max(GAP_OBS_FLOOR);
            loss += (next.gap - g_obs).powi(2) / (g_obs * g_obs) / norm;
            inputs.push(x);
            outs.push(o);
            free.push(s.v_follow + a * dt > 0.0);
            obs.push(g_obs);
            hs.push(h);
            states.push(next);
            if next.gap <= 0.0 {
                collided = true;
                break;
            }
        }
        if let Some(g) = grads {
            self.backprop(&hs, &states, &inputs, &outs, &free, &obs, dt, norm, g);
        }
        Segment {
            loss,
            steps: outs.len(),
            h_end: hs.pop().unwrap(),
            s_end: *states.last().unwrap(),
            collided,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop(
        &self,
        hs: &[Vec<f64>],
        states: &[CfState],
        inputs: &[[f64; 3]],
        outs: &[f64],
        free: &[bool],
        obs: &[f64],
        dt: f64,
        norm: f64,
        grads: &mut [f64],
    ) {
        let n = self.hidden;
        let [o_wi, o_bi, o_wh, o_wo, o_bo] = self.offsets();
        let (w_i, w_h, w_o) = (self.w_i(), self.w_h(), self.w_o());
        // adjoints of (speed, relative speed, gap) and hidden state after step t
        let mut g_s = [0.0f64; 3];
        let mut g_h = vec![0.0; n];
        let mut g_z = vec![0.0; n];
        for t in (0..outs.len()).rev() {
            let next = &states[t + 1];
            g_s[2] += 2.0 * (next.gap - obs[t]) / (obs[t] * obs[t]) / norm;

            // v' = max(0, v + a·dt); dv' = v_lead' − v'; gap' = gap + (dv + dv')·dt/2
            let g_v_next = g_s[0] - g_s[1] - g_s[2] * dt / 2.0;
            let (dvn_dv, dvn_da) = if free[t] { (1.0, dt) } else { (0.0, 0.0) };
            let g_a = g_v_next * dvn_da;
            let mut g_prev = [g_v_next * dvn_dv, g_s[2] * dt / 2.0, g_s[2]];

            let g_o = if outs[t].abs() < MAX_ACCEL { g_a } else { 0.0 };
            let h_next = &hs[t + 1];
            let h_prev = &hs[t];
            grads[o_bo] += g_o;
            for j in 0..n {
                grads[o_wo + j] += g_o * h_next[j];
                let g = g_h[j] + g_o * w_o[j];
                g_z[j] = if h_next[j] > 0.0 { g } else { 0.0 };
            }
            for j in 0..n {
                let gz = g_z[j];
                if gz == 0.0 {
                    continue;
                }
                grads[o_bi + j] += gz;
                for k in 0..3 {
                    grads[o_wi + j * 3 + k] += gz * inputs[t][k];
                }
                let row = o_wh + j * n;
                for k in 0..n {
                    grads[row + k] += gz * h_prev[k];
                }
            }
            for k in 0..n {
                g_h[k] = (0..n).map(|j| w_h[j * n + k] * g_z[j]).sum();
            }
            for k in 0..3 {
                let g_in: f64 = (0..n).map(|j| w_i[j * 3 + k] * g_z[j]).sum();
                g_prev[k] += g_in / self.state_scale[k];
            }
            g_s = g_prev;
        }
    }

    /// Mean normalized squared spacing error of one period's rollout, with the
    /// gradient of that mean under `truncation`-step truncated BPTT.
    pub fn period_gradient(&self, period: &CfPeriod, truncation: usize) -> Result<(f64, Vec<f64>)> {
        if period.len() < 2 {
            return Err(Error::EmptyPeriod(period.len()));
        }
        let norm = (period.len() - 1) as f64;
        let mut grads = vec![0.0; self.params.len()];
        let mut h = vec![0.0; self.hidden];
        let mut s = period.initial_state();
        let mut k = 0;
        let mut loss = 0.0;
        while k < period.len() - 1 {
            let seg = self.segment(period, k, truncation.max(1), h, s, norm, Some(&mut grads));
            loss += seg.loss;
            k += seg.steps;
            if seg.collided {
                break;
            }
            h = seg.h_end;
            s = seg.s_end;
        }
        Ok((loss, grads))
    }

    /// Pooled objective: sum of normalized squared spacing errors over all
    /// simulated steps of all periods divided by the number of steps.
    pub fn objective(&self, periods: &[CfPeriod]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for p in periods {
            if p.len() < 2 {
                return Err(Error::EmptyPeriod(p.len()));
            }
            let seg = self.segment(
                p,
                0,
                p.len() - 1,
                vec![0.0; self.hidden],
                p.initial_state(),
                1.0,
                None,
            );
            total += seg.loss;
            count += seg.steps;
        }
        if count == 0 {
            return Err(Error::InsufficientData("no periods to evaluate".into()));
        }
        Ok(total / count as f64)
    }
}

struct Segment {
    loss: f64,
    steps: usize,
    h_end: Vec<f64>,
    s_end: CfState,
    collided: bool,
}

/// One recurrent step on an already-encoded input: returns the new hidden
/// state and the acceleration clamped to ±3 m/s².
pub fn rnn_step(m: &RnnModel, h: &[f64], input: &[f64; 3]) -> Result<(Vec<f64>, f64)> {
    if h.len() != m.hidden {
        return Err(Error::Shape {
            expected: m.hidden,
            got: h.len(),
        });
    }
    let (h_next, o) = m.cell(h, input);
    Ok((h_next, o.clamp(-MAX_ACCEL, MAX_ACCEL)))
}

/// Trains by Adam, one update per calibration period per epoch, with
/// gradients from truncated BPTT through the kinematic update. Returns the
/// parameters of the epoch with the lowest objective and the objective after
/// every epoch (entry 0 is the untrained model).
pub fn rnn_train(periods: &[CfPeriod], cfg: &RnnConfig, seed: u64) -> Result<(RnnModel, Vec<f64>)> {
    if periods.is_empty() {
        return Err(Error::InsufficientData(
            "recurrent model needs at least one period".into(),
        ));
    }
    let mut model = RnnModel::init(cfg.hidden, seed);
    let mut opt = crate::nn::Adam::new(model.params.len(), cfg.learning_rate);
    let mut rng = stream_rng(seed, "rnn/shuffle");
    let mut order: Vec<usize> = (0..periods.len()).collect();
    let mut history = vec![model.objective(periods)?];
    let mut best = (history[0], model.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (_, grads) = model.period_gradient(&periods[i], cfg.truncation)?;
            opt.step(&mut model.params, &grads)?;
        }
        let obj = model.objective(periods)?;
        if !obj.is_finite() {
            return Err(Error::Divergence(format!(
                "objective is {obj} after epoch {epoch}"
            )));
        }
        log::debug!("rnn epoch {epoch}: objective {obj:.6}");
        if obj < best.0 {
            best = (obj, model.clone());
        }
        history.push(obj);
    }
    Ok((best.1, history))
}

#[derive(Debug, Clone)]
pub struct RnnPolicy<'a> {
    model: &'a RnnModel,
    h: Vec<f64>,
}

impl<'a> RnnPolicy<'a> {
    pub fn new(model: &'a RnnModel) -> Self {
        Self {
            model,
            h: vec![0.0; model.hidden],
        }
    }
}

impl Policy for RnnPolicy<'_> {
    fn reset(&mut self, _initial: &CfState) {
        self.h.iter_mut().for_each(|x| *x = 0.0);
    }

    fn act(&mut self, s: &CfState) -> f64 {
        let (h, o) = self.model.cell(&self.h, &self.model.encode(s));
        self.h = h;
        o.clamp(-MAX_ACCEL, MAX_ACCEL)
    }
}

impl CarFollowingModel for RnnModel {
    fn policy_for(&self, _period: &CfPeriod) -> Box<dyn Policy + '_> {
        Box::new(RnnPolicy::new(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_driver, Sample, Style, SynthConfig};
    use crate::kinematics::run_episode;
    use crate::nn::{max_relative_error, numerical_gradient};

    fn toy_period(n: usize) -> CfPeriod {
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 * 0.1;
                let vl = 12.0 + (0.7 * t).sin();
                Sample {
                    v_follow: 11.0 + 0.2 * t,
                    v_lead: vl,
                    gap: 20.0 + (0.5 * t).cos(),
                    a_follow: 0.0,
                }
            })
            .collect();
        CfPeriod::new(0.1, samples, "toy")
    }

    #[test]
    fn zero_weights() {
        let mut m = RnnModel::zeros(4);
        m.b_i_mut().copy_from_slice(&[0.5, -1.0, 0.0, 2.0]);
        let (h, a) = rnn_step(&m, &[0.3; 4], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(h, vec![0.5, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn hand_set_single_unit() {
        let mut m = RnnModel::zeros(1);
        m.w_h_mut()[0] = 0.5;
        m.w_i_mut().copy_from_slice(&[1.0, 0.0, 0.0]);
        m.w_o_mut()[0] = 2.0;
        let (h1, o1) = rnn_step(&m, &[0.0], &[1.0, 0.0, 0.0]).unwrap();
        let (h2, o2) = rnn_step(&m, &h1, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((h1[0], h2[0]), (1.0, 1.5));
        assert_eq!((o1, o2), (2.0, 3.0));
    }

    #[test]
    fn severed_recurrence_is_feedforward() {
        let mut m = RnnModel::init(8, 3);
        m.w_h_mut().iter_mut().for_each(|w| *w = 0.0);
        let x = [0.4, -0.2, 0.3];
        let a = rnn_step(&m, &[0.0; 8], &x).unwrap().1;
        let b = rnn_step(&m, &[5.0; 8], &x).unwrap().1;
        assert_eq!(a, b);
    }

    fn gradient_check(hidden: usize, steps: usize, trunc: usize, seed: u64) -> f64 {
        let mut m = RnnModel::init(hidden, seed);
        // larger output weights so the spacing actually responds to the parameters
        m.w_o_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(j, w)| *w = 0.3 * ((j as f64 * 1.7).sin()));
        m.b_i_mut().iter_mut().for_each(|b| *b = 0.1);
        let p = toy_period(steps + 1);
        let (_, analytic) = m.period_gradient(&p, trunc).unwrap();
        let numeric = numerical_gradient(m.params(), 1e-5, |theta| {
            let mut mm = m.clone();
            mm.params_mut().copy_from_slice(theta);
            mm.period_gradient(&p, trunc).unwrap().0
        });
        max_relative_error(&analytic, &numeric, 1e-6)
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let err = gradient_check(6, 5, 50, 1);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn bptt_matches_finite_differences_full_width() {
        let err = gradient_check(RNN_HIDDEN, 5, 50, 2);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn truncation_blocks_long_range_gradient() {
        // the truncated gradient differs from the full one once the rollout
        // spans several windows
        let m = RnnModel::init(5, 4);
        let p = toy_period(12);
        let full = m.period_gradient(&p, 50).unwrap();
        let cut = m.period_gradient(&p, 3).unwrap();
        assert_eq!(full.0, cut.0);
        assert_ne!(full.1, cut.1);
    }

    #[test]
    fn objective_matches_rollout() {
        let m = RnnModel::init(10, 5);
        let p = toy_period(40);
        let traj = run_episode(&mut RnnPolicy::new(&m), &p, 0.1).unwrap();
        let want: f64 = traj.states[1..]
            .iter()
            .zip(&p.samples[1..])
            .map(|(s, o)| (s.gap - o.gap).powi(2) / (o.gap * o.gap))
            .sum::<f64>()
            / 39.0;
        assert!((m.objective(&[p]).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(rnn_train(&[], &RnnConfig::default(), 1).is_err());
    }

    #[test]
    fn training_reduces_objective() {
        let cfg = SynthConfig {
            min_duration: 16.0,
            max_duration: 20.0,
            ..SynthConfig::noiseless()
        };
        let ds = generate_synthetic_driver(&cfg, Style::Conservative, 4, 8, "d").unwrap();
        let rc = RnnConfig {
            hidden: 20,
            epochs: 15,
            ..RnnConfig::default()
        };
        let (m, hist) = rnn_train(&ds.periods, &rc, 3).unwrap();
        let best = hist.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best < hist[0], "{hist:?}");
        assert_eq!(m.objective(&ds.periods).unwrap(), best);
    }

    #[test]
    fn json_round_trip() {
        let m = RnnModel::init(7, 9);
        let back: RnnModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
