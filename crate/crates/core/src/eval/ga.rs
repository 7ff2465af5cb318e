use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accumulate_trajectory, RmspeAccumulator};
use crate::baselines::{IdmParams, IdmPolicy, IDM_BOUNDS};
use crate::data::CfPeriod;
use crate::error::{Error, Result};
use crate::kinematics::run_episode;
use crate::seed::stream_rng;

/// Added to the spacing RMSPE of a parameter set whose rollout collides.
pub const COLLISION_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    /// Upper bound on generations per run, counting the initial population.
    pub max_generations: usize,
    /// A run stops after this many consecutive generations without improvement.
    pub stall_generations: usize,
    pub runs: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each parameter's range.
    pub mutation_scale: f64,
    pub tournament_size: usize,
    pub elitism: usize,
    pub blend_alpha: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 300,
            max_generations: 300,
            stall_generations: 100,
            runs: 12,
            crossover_rate: 0.8,
            mutation_rate: 0.1,
            mutation_scale: 0.05,
            tournament_size: 3,
            elitism: 1,
            blend_alpha: 0.5,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.runs == 0 || self.max_generations == 0 {
            return bad("runs and max_generations must be at least 1");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1");
        }
        if self.elitism >= self.population {
            return bad("elitism must be smaller than the population");
        }
        for (name, p) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.mutation_scale >= 0.0 && self.blend_alpha >= 0.0) {
            return bad("mutation_scale and blend_alpha must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub params: IdmParams,
    pub fitness: f64,
    /// Best-so-far fitness after each generation, one series per run.
    pub histories: Vec<Vec<f64>>,
}

/// Pooled spacing RMSPE of IDM rollouts over `periods`, plus
/// [`COLLISION_PENALTY`] if any rollout collides. Errors score as infinity.
pub fn idm_fitness(params: &IdmParams, periods: &[CfPeriod]) -> f64 {
    let mut spacing = RmspeAccumulator::default();
    let mut speed = RmspeAccumulator::default();
    let mut collided = false;
    for p in periods {
        let traj = match run_episode(&mut IdmPolicy(*params), p, p.dt) {
            Ok(t) => t,
            Err(_) => return f64::INFINITY,
        };
        if accumulate_trajectory(&traj, p, &mut spacing, &mut speed).is_err() {
            return f64::INFINITY;
        }
        collided |= traj.collided;
    }
    match spacing.value() {
        Ok(v) if collided => v + COLLISION_PENALTY,
        Ok(v) => v,
        Err(_) => f64::INFINITY,
    }
}

/// Calibrates IDM parameters within [`IDM_BOUNDS`] by `cfg.runs` independent
/// genetic-algorithm runs and keeps the best result.
pub fn ga_calibrate_idm(periods: &[CfPeriod], cfg: &GaConfig) -> Result<GaOutcome> {
    cfg.validate()?;
    if periods.is_empty() {
        return Err(Error::InsufficientData(
            "calibration needs at least one period".into(),
        ));
    }
    let mut best: Option<([f64; 6], f64)> = None;
    let mut histories = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut rng = stream_rng(cfg.seed, &format!("ga/run{run}"));
        let (genes, fit, history) = ga_run(periods, cfg, &mut rng);
        log::debug!(
            "ga run {run}: fitness {fit:.6} after {} generations",
            history.len()
        );
        if best.is_none_or(|(_, b)| fit < b) {
            best = Some((genes, fit));
        }
        histories.push(history);
    }
    let (genes, fitness) = best.expect("at least one run");
    Ok(GaOutcome {
        params: IdmParams::from_array(genes),
        fitness,
        histories,
    })
}

fn evaluate(pop: &[[f64; 6]], periods: &[CfPeriod]) -> Vec<f64> {
    pop.par_iter()
        .map(|g| idm_fitness(&IdmParams::from_array(*g), periods))
        .collect()
}

fn argmin(fit: &[f64]) -> usize {
    (0..fit.len())
        .min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)))
        .unwrap()
}

fn ga_run(periods: &[CfPeriod], cfg: &GaConfig, rng: &mut ChaCha8Rng) -> ([f64; 6], f64, Vec<f64>) {
    let mut pop: Vec<[f64; 6]> = (0..cfg.population)
        .map(|_| std::array::from_fn(|j| rng.gen_range(IDM_BOUNDS[j].0..=IDM_BOUNDS[j].1)))
        .collect();
    let mut fit = evaluate(&pop, periods);
    let i = argmin(&fit);
    let (mut best, mut best_fit) = (pop[i], fit[i]);
    let mut history = vec![best_fit];
    let mut stall = 0;

    for _ in 1..cfg.max_generations {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let mut next: Vec<[f64; 6]> = order[..cfg.elitism].iter().map(|&i| pop[i]).collect();
        let mut next_fit: Vec<f64> = order[..cfg.elitism].iter().map(|&i| fit[i]).collect();
        let mut children = Vec::with_capacity(cfg.population - cfg.elitism);
        while next.len() + children.len() < cfg.population {
            let a = pop[tournament(&fit, cfg.tournament_size, rng)];
            let b = pop[tournament(&fit, cfg.tournament_size, rng)];
            let mut child = if rng.gen::<f64>() < cfg.crossover_rate {
                blend(&a, &b, cfg.blend_alpha, rng)
            } else {
                a
            };
            mutate(&mut child, cfg, rng);
            children.push(child);
        }
        next_fit.extend(evaluate(&children, periods));
        next.extend(children);
        pop = next;
        fit = next_fit;

        let i = argmin(&fit);
        if fit[i] < best_fit {
            best = pop[i];
            best_fit = fit[i];
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(best_fit);
        if stall >= cfg.stall_generations {
            break;
        }
    }
    (best, best_fit, history)
}

fn tournament(fit: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.gen_range(0..fit.len());
    for _ in 1..size {
        let c = rng.gen_range(0..fit.len());
        if fit[c] < fit[winner] {
            winner = c;
        }
    }
    winner
}

/// BLX-α: each child gene uniform on the parents' interval widened by α on both sides.
fn blend(a: &[f64; 6], b: &[f64; 6], alpha: f64, rng: &mut ChaCha8Rng) -> [f64; 6] {
    std::array::from_fn(|j| {
        let (lo, hi) = (a[j].min(b[j]), a[j].max(b[j]));
        let d = hi - lo;
        let x = if d == 0.0 {
            lo
        } else {
            rng.gen_range(lo - alpha * d..=hi + alpha * d)
        };
        x.clamp(IDM_BOUNDS[j].0, IDM_BOUNDS[j].1)
    })
}

fn mutate(g: &mut [f64; 6], cfg: &GaConfig, rng: &mut ChaCha8Rng) {
    for (j, x) in g.iter_mut().enumerate() {
        if rng.gen::<f64>() < cfg.mutation_rate {
            let (lo, hi) = IDM_BOUNDS[j];
            let z: f64 = rng.sample(StandardNormal);
            *x = (*x + z * cfg.mutation_scale * (hi - lo)).clamp(lo, hi);
        }
    }
}
