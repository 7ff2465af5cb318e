use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use carfollow::baselines::{
    nna_fit_periods, rnn_train, LoessModel, NnaConfig, RnnConfig, DEFAULT_SPAN,
};
use carfollow::data::io::{
    read_dataset, read_driver, read_manifest, read_period_csv, read_raw_log_csv, write_dataset,
    PERIOD_HEADER,
};
use carfollow::data::{
    cluster_driving_styles, extract_periods, generate_synthetic_driver,
    split_calibration_validation, style_features, DriverDataset, Style, SynthConfig,
};
use carfollow::ddpg::{self, curves_to_csv, RewardMode, TrainConfig};
use carfollow::eval::{
    compare_models, evaluate_model, ga_calibrate_idm, inter_driver_validate, intra_driver_validate,
    EvalRow, GaConfig, ModelEntry, EVAL_REPORT_HEADER,
};
use carfollow::fsutil::{fmt_f64, numeric_csv, write_atomic, write_json};
use carfollow::kinematics::{clamp_action, run_episode, CarFollowingModel};
use carfollow::model_file::{ModelFile, ModelKind};
use carfollow::seed::derive_seed;

use crate::{
    CalibrateArgs, ClusterArgs, EvaluateArgs, ExtractArgs, GenDataArgs, ModeArg, ModelArg,
    SimulateArgs, StyleArg, TrainArgs,
};

const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    tool_version: &'a str,
    argv: Vec<String>,
    config: &'a C,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    duration_secs: f64,
}

struct Run {
    command: &'static str,
    started: Instant,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, seed: Option<u64>) -> Self {
        Self {
            command,
            started: Instant::now(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn finish<C: Serialize>(self, config: &C, manifest: &Path) -> Result<()> {
        let m = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(manifest, &m)?;
        info!("wrote {}", manifest.display());
        Ok(())
    }
}

/// `model.json` → `model.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn check_csv_header(path: &Path, header: &str) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("re-reading {}", path.display()))?;
    ensure!(
        text.lines().next() == Some(header),
        "{} does not start with header '{header}'",
        path.display()
    );
    Ok(())
}

fn driver_ids(n: u32) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|i| format!("d{i:0width$}")).collect()
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut run = Run::new("gen-data", Some(a.seed));
    let mut cfg = SynthConfig::default();
    if let Some(noise) = a.noise {
        ensure!(
            noise >= 0.0 && noise.is_finite(),
            "--noise must be a non-negative number"
        );
        cfg.accel_noise_std = noise;
    }
    let ids = driver_ids(a.drivers);
    let drivers: Vec<DriverDataset> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let style = match a.style {
                StyleArg::Aggressive => Style::Aggressive,
                StyleArg::Conservative => Style::Conservative,
                StyleArg::Mixed if i % 2 == 0 => Style::Aggressive,
                StyleArg::Mixed => Style::Conservative,
            };
            let seed = derive_seed(a.seed, &format!("driver/{i}"));
            generate_synthetic_driver(&cfg, style, a.periods as usize, seed, id)
        })
        .collect::<carfollow::Result<_>>()?;
    write_dataset(&a.out, &drivers)
        .with_context(|| format!("writing dataset to {}", a.out.display()))?;

    let manifest = read_manifest(&a.out)?;
    ensure!(
        manifest.drivers.len() == drivers.len(),
        "manifest lists {} drivers",
        manifest.drivers.len()
    );
    ensure!(
        manifest
            .drivers
            .iter()
            .all(|d| d.periods.len() == a.periods as usize),
        "manifest period counts do not match"
    );
    info!(
        "wrote {} drivers × {} periods to {}",
        a.drivers,
        a.periods,
        a.out.display()
    );
    run.output(&a.out);
    run.finish(&(a, &cfg), &a.out.join(RUN_MANIFEST_FILE))
}

fn write_epoch_curve(path: &Path, column: &str, values: &[f64], first_epoch: usize) -> Result<()> {
    let mut out = format!("epoch,{column}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + first_epoch, fmt_f64(*v)));
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut run = Run::new("train", Some(a.seed));
    let driver = read_driver(&a.data, &a.driver)?;
    run.input(&a.data);
    let (calib, valid) = split_calibration_validation(&driver, a.split_seed)?;
    let curves_path = a
        .curves
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "curves.csv"));
    let name = format!("{:?}", a.model).to_lowercase();

    let (kind, config): (ModelKind, serde_json::Value) = match a.model {
        ModelArg::Ddpgs | ModelArg::Ddpgv | ModelArg::Ddpgvrt => {
            let mode = if a.model == ModelArg::Ddpgs {
                RewardMode::Spacing
            } else {
                RewardMode::Speed
            };
            let mut cfg = TrainConfig::preset(mode, a.model == ModelArg::Ddpgvrt);
            if let Some(e) = a.episodes {
                cfg.episodes = e;
            }
            let (model, curves) = ddpg::train(&calib.periods, &valid.periods, cfg.clone(), a.seed)?;
            write_atomic(&curves_path, curves_to_csv(&curves).as_bytes())?;
            check_csv_header(&curves_path, ddpg::LEARNING_CURVE_HEADER)?;
            run.output(&curves_path);
            (
                ModelKind::Ddpg(model.actor_model()),
                serde_json::to_value(cfg)?,
            )
        }
        ModelArg::Nna => {
            let mut cfg = NnaConfig::default();
            if let Some(e) = a.episodes {
                cfg.epochs = e;
            }
            let (model, losses) = nna_fit_periods(&calib.periods, &cfg, a.seed)?;
            write_epoch_curve(&curves_path, "loss", &losses, 1)?;
            run.output(&curves_path);
            (ModelKind::Nna(model), serde_json::to_value(cfg)?)
        }
        ModelArg::Rnn => {
            let mut cfg = RnnConfig::default();
            if let Some(e) = a.episodes {
                cfg.epochs = e;
            }
            let (model, objective) = rnn_train(&calib.periods, &cfg, a.seed)?;
            write_epoch_curve(&curves_path, "objective", &objective, 0)?;
            run.output(&curves_path);
            (ModelKind::Rnn(model), serde_json::to_value(cfg)?)
        }
        ModelArg::Loess => {
            let model = LoessModel::fit(&calib.periods, DEFAULT_SPAN)?;
            (
                ModelKind::Loess(model),
                serde_json::json!({ "span": DEFAULT_SPAN }),
            )
        }
    };
    let file = ModelFile::new(name, Some(a.driver.clone()), Some(a.split_seed), kind);
    file.save(&a.out)?;
    let loaded = ModelFile::load(&a.out)?;
    ensure!(
        loaded == file,
        "model file {} did not round-trip",
        a.out.display()
    );
    run.output(&a.out);

    let e = evaluate_model(file.model.as_model(), &valid.periods)?;
    info!(
        "{} on {}: validation spacing RMSPE {:.4}, speed RMSPE {:.4}",
        file.name, a.driver, e.spacing, e.speed
    );
    run.finish(&(a, config), &sibling(&a.out, "run.json"))
}

pub fn calibrate_idm(a: &CalibrateArgs) -> Result<()> {
    let mut run = Run::new("calibrate-idm", Some(a.seed));
    let driver = read_driver(&a.data, &a.driver)?;
    run.input(&a.data);
    let (calib, valid) = split_calibration_validation(&driver, a.split_seed)?;
    let cfg = GaConfig {
        population: a.population,
        max_generations: a.generations,
        stall_generations: a.stall,
        runs: a.runs,
        seed: a.seed,
        ..GaConfig::default()
    };
    let out = ga_calibrate_idm(&calib.periods, &cfg)?;
    info!(
        "calibrated {}: fitness {:.5}, {:?}",
        a.driver, out.fitness, out.params
    );
    let file = ModelFile::new(
        "idm",
        Some(a.driver.clone()),
        Some(a.split_seed),
        ModelKind::Idm(out.params),
    );
    file.save(&a.out)?;
    ensure!(
        ModelFile::load(&a.out)? == file,
        "parameter file {} did not round-trip",
        a.out.display()
    );
    run.output(&a.out);

    let history = sibling(&a.out, "ga.csv");
    let mut csv = String::from("run,generation,best_fitness\n");
    for (r, h) in out.histories.iter().enumerate() {
        for (g, f) in h.iter().enumerate() {
            csv.push_str(&format!("{r},{},{}\n", g + 1, fmt_f64(*f)));
        }
    }
    write_atomic(&history, csv.as_bytes())?;
    run.output(&history);

    let e = evaluate_model(&out.params, &valid.periods)?;
    info!(
        "validation spacing RMSPE {:.4}, speed RMSPE {:.4}",
        e.spacing, e.speed
    );
    run.finish(&cfg, &sibling(&a.out, "run.json"))
}

struct LoadedModel {
    path: PathBuf,
    file: ModelFile,
    driver: String,
}

/// Model files grouped by name, in first-seen order.
fn group_by_name(models: &[LoadedModel]) -> Vec<(String, Vec<&LoadedModel>)> {
    let mut groups: Vec<(String, Vec<&LoadedModel>)> = Vec::new();
    for m in models {
        match groups.iter_mut().find(|(n, _)| *n == m.file.name) {
            Some((_, v)) => v.push(m),
            None => groups.push((m.file.name.clone(), vec![m])),
        }
    }
    groups
}

/// Drivers (in dataset order) and the matching model of `group` for each.
fn align<'a>(
    group: &[&'a LoadedModel],
    datasets: &'a [DriverDataset],
    name: &str,
) -> Result<(Vec<DriverDataset>, Vec<&'a dyn CarFollowingModel>)> {
    let mut by_driver: BTreeMap<&str, &LoadedModel> = BTreeMap::new();
    for m in group {
        if let Some(prev) = by_driver.insert(&m.driver, m) {
            bail!(
                "model '{name}' has two files for driver {}: {} and {}",
                m.driver,
                prev.path.display(),
                m.path.display()
            );
        }
    }
    let mut drivers = Vec::new();
    let mut models = Vec::new();
    for d in datasets {
        if let Some(m) = by_driver.remove(d.driver_id.as_str()) {
            drivers.push(d.clone());
            models.push(m.file.model.as_model());
        }
    }
    if let Some((id, m)) = by_driver.into_iter().next() {
        bail!("driver {id} of {} is not in the dataset", m.path.display());
    }
    Ok((drivers, models))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut run = Run::new("evaluate", None);
    let datasets = read_dataset(&a.data)?;
    run.input(&a.data);
    let mut loaded = Vec::with_capacity(a.models.len());
    for p in &a.models {
        let file = ModelFile::load(p)?;
        let driver = file.driver_id.clone().with_context(|| {
            format!(
                "model file {} does not record the driver it was fitted on",
                p.display()
            )
        })?;
        run.input(p);
        loaded.push(LoadedModel {
            path: p.clone(),
            file,
            driver,
        });
    }
    let recorded: Vec<u64> = loaded.iter().filter_map(|m| m.file.split_seed).collect();
    let split_seed = match a.split_seed {
        Some(s) => s,
        None => {
            let s = recorded.first().copied().unwrap_or(0);
            if recorded.iter().any(|r| *r != s) {
                warn!("model files record different split seeds; using {s} (pass --split-seed to choose)");
            }
            s
        }
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    match a.mode {
        ModeArg::Intra => {
            let rows = loaded
                .par_iter()
                .map(|m| {
                    let d = datasets
                        .iter()
                        .find(|d| d.driver_id == m.driver)
                        .with_context(|| {
                            format!(
                                "driver {} of {} is not in the dataset",
                                m.driver,
                                m.path.display()
                            )
                        })?;
                    let e = intra_driver_validate(m.file.model.as_model(), d, split_seed)?;
                    Ok(EvalRow {
                        model: m.file.name.clone(),
                        calib_driver: m.driver.clone(),
                        valid_driver: m.driver.clone(),
                        rmspe_spacing: e.spacing,
                        rmspe_speed: e.speed,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = carfollow::eval::EvalReport {
                rows,
                summary: Vec::new(),
            };
            let path = a.out.join("intra.csv");
            write_atomic(&path, report.to_csv().as_bytes())?;
            check_csv_header(&path, EVAL_REPORT_HEADER)?;
            for r in &report.rows {
                info!(
                    "{} {}: spacing {:.4} speed {:.4}",
                    r.model, r.calib_driver, r.rmspe_spacing, r.rmspe_speed
                );
            }
            run.output(&path);
        }
        ModeArg::Inter => {
            for (name, group) in group_by_name(&loaded) {
                let (drivers, models) = align(&group, &datasets, &name)?;
                let res = inter_driver_validate(&models, &drivers, split_seed)?;
                for (q, m) in [("spacing", &res.spacing), ("speed", &res.speed)] {
                    let path = a.out.join(format!("inter_{name}_{q}.csv"));
                    write_atomic(&path, m.to_csv().as_bytes())?;
                    let text = std::fs::read_to_string(&path)?;
                    ensure!(
                        text.lines().count() == m.len() + 1,
                        "{} has the wrong number of rows",
                        path.display()
                    );
                    run.output(&path);
                }
                info!(
                    "{name}: {n}×{n} matrices, spacing intra {:.4} inter {:.4}",
                    res.spacing.diagonal_mean(),
                    res.spacing.off_diagonal_mean(),
                    n = res.spacing.len()
                );
            }
        }
        ModeArg::Compare => {
            let groups = group_by_name(&loaded);
            let mut aligned = Vec::new();
            for (name, group) in &groups {
                let (drivers, models) = align(group, &datasets, name)?;
                aligned.push((name.clone(), drivers, models));
            }
            let ids =
                |ds: &[DriverDataset]| ds.iter().map(|d| d.driver_id.clone()).collect::<Vec<_>>();
            let drivers = aligned[0].1.clone();
            for (name, ds, _) in &aligned {
                ensure!(
                    ids(ds) == ids(&drivers),
                    "model '{name}' does not cover the same drivers as '{}'",
                    aligned[0].0
                );
            }
            let entries: Vec<ModelEntry> = aligned
                .into_iter()
                .map(|(name, _, models)| ModelEntry { name, models })
                .collect();
            let report = compare_models(&entries, &drivers, split_seed)?;
            let csv = a.out.join("report.csv");
            let json = a.out.join("report.json");
            write_atomic(&csv, report.to_csv().as_bytes())?;
            check_csv_header(&csv, EVAL_REPORT_HEADER)?;
            write_json(&json, &report)?;
            let back: carfollow::eval::EvalReport = carfollow::fsutil::read_json(&json)?;
            ensure!(
                back.rows.len() == report.rows.len(),
                "{} did not round-trip",
                json.display()
            );
            let fmt = |m: Option<f64>, sd: Option<f64>| match (m, sd) {
                (Some(m), Some(sd)) => format!("{m:.4}±{sd:.4}"),
                _ => "n/a".to_string(),
            };
            for s in &report.summary {
                info!(
                    "{}: intra spacing {:.4}±{:.4} speed {:.4}±{:.4}; inter spacing {} speed {}",
                    s.model,
                    s.intra_spacing_mean,
                    s.intra_spacing_std,
                    s.intra_speed_mean,
                    s.intra_speed_std,
                    fmt(s.inter_spacing_mean, s.inter_spacing_std),
                    fmt(s.inter_speed_mean, s.inter_speed_std)
                );
            }
            run.output(&csv);
            run.output(&json);
        }
    }
    #[derive(Serialize)]
    struct Config<'a> {
        #[serde(flatten)]
        args: &'a EvaluateArgs,
        effective_split_seed: u64,
    }
    run.finish(
        &Config {
            args: a,
            effective_split_seed: split_seed,
        },
        &a.out.join(RUN_MANIFEST_FILE),
    )
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut run = Run::new("simulate", None);
    let period = read_period_csv(&a.period, a.dt, "")?;
    run.input(&a.period);
    let kind = if a.model == "replay" {
        ModelKind::Replay
    } else {
        let path = Path::new(&a.model);
        run.input(path);
        ModelFile::load(path)?.model
    };
    let model = kind.as_model();
    let mut policy = model.policy_for(&period);
    let traj = run_episode(&mut *policy, &period, period.dt)?;
    if traj.collided {
        warn!(
            "rollout collided after {} of {} samples",
            traj.states.len(),
            period.len()
        );
    }
    // the last row carries the action the policy would take next
    let last = traj
        .states
        .last()
        .copied()
        .expect("trajectory has the initial state");
    let final_action = clamp_action(policy.act(&last)).unwrap_or(0.0);
    let rows: Vec<[f64; 5]> = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let a = traj.actions.get(k).copied().unwrap_or(final_action);
            [
                k as f64 * period.dt,
                s.v_follow,
                period.samples[k].v_lead,
                s.gap,
                a,
            ]
        })
        .collect();
    write_atomic(
        &a.out,
        numeric_csv(PERIOD_HEADER, rows.iter().map(|r| &r[..])).as_bytes(),
    )?;
    let back = read_period_csv(&a.out, Some(period.dt), "")?;
    ensure!(
        back.len() == rows.len(),
        "{} did not round-trip",
        a.out.display()
    );
    run.output(&a.out);
    run.finish(&(a, kind.kind_name()), &sibling(&a.out, "run.json"))
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let mut run = Run::new("extract", None);
    let log = read_raw_log_csv(&a.raw)?;
    run.input(&a.raw);
    let id = a.driver_id.clone().unwrap_or_else(|| {
        a.raw
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "driver".into())
    });
    let mut periods = extract_periods(&log, a.dt)?;
    for p in &mut periods {
        p.driver_id = id.clone();
    }
    let drivers = if periods.is_empty() {
        warn!("no car-following periods found in {}", a.raw.display());
        Vec::new()
    } else {
        info!(
            "extracted {} periods from {}",
            periods.len(),
            a.raw.display()
        );
        vec![DriverDataset {
            driver_id: id,
            style: Style::Unknown,
            periods,
            ground_truth: None,
        }]
    };
    write_dataset(&a.out, &drivers)?;
    let back = read_dataset(&a.out)?;
    ensure!(
        back.len() == drivers.len(),
        "dataset in {} did not round-trip",
        a.out.display()
    );
    run.output(&a.out);
    run.finish(a, &a.out.join(RUN_MANIFEST_FILE))
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let mut run = Run::new("cluster", None);
    let datasets = read_dataset(&a.data)?;
    run.input(&a.data);
    let labels = cluster_driving_styles(&datasets)?;

    #[derive(Serialize, serde::Deserialize)]
    struct Label {
        driver_id: String,
        style: Style,
        features: [f64; 6],
    }
    let out: Vec<Label> = datasets
        .iter()
        .zip(&labels)
        .map(|(d, s)| Label {
            driver_id: d.driver_id.clone(),
            style: *s,
            features: style_features(d).0,
        })
        .collect();
    for l in &out {
        info!("{}: {}", l.driver_id, l.style);
    }
    write_json(&a.out, &out)?;
    let back: Vec<Label> = carfollow::fsutil::read_json(&a.out)?;
    ensure!(
        back.len() == out.len(),
        "{} did not round-trip",
        a.out.display()
    );
    run.output(&a.out);
    run.finish(a, &sibling(&a.out, "run.json"))
}
