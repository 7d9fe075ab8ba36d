//! The five subcommands. Each takes a validated config plus explicit paths
//! and writes its results under `config.out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gce_core::dataset::directory_checksum;
use gce_core::embedding::{prediction_nrmse, Form};
use gce_core::mean_field::GibbsPotential;
use gce_core::rng;
use gce_core::sim::{generate_dataset, ActionPolicy, Environment};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, FeatureConfig};
use crate::csv::{mean_std, Cell, Csv};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    control_episode, control_problem, fit_pipeline, generate, load_bundle, load_dataset, save_bundle, write_json,
    EpisodeOutcome,
};

fn prepare_out(cfg: &ExperimentConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out.display())))
}

fn environment_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, "environment", 0)
}

#[derive(Debug, Serialize)]
struct GenerateSummary {
    checksum: String,
    nodes: usize,
    edges: usize,
    connected: bool,
    trajectories: usize,
    steps: usize,
}

/// Write `out/dataset/` (trajectory CSVs and `manifest.json`) and return its path.
pub fn cmd_generate(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    prepare_out(cfg)?;
    let env = cfg.environment.build(environment_seed(cfg.seed))?;
    let ds = generate(cfg, &env, cfg.episodes, rng::derive_seed(cfg.seed, "train", 0))?;
    let dir = cfg.out.join("dataset");
    clear_dataset(&dir)?;
    ds.save(&dir)?;
    let summary = GenerateSummary {
        checksum: directory_checksum(&dir)?,
        nodes: ds.graph.n(),
        edges: ds.graph.edges().len(),
        connected: ds.graph.is_connected(),
        trajectories: ds.trajectories.len(),
        steps: cfg.steps,
    };
    write_json(&cfg.out.join("config.json"), cfg)?;
    write_json(&cfg.out.join("generate.json"), &summary)?;
    Ok(dir)
}

/// Remove only files a previous `generate` wrote, so a smaller rerun leaves no stale trajectories.
fn clear_dataset(dir: &Path) -> CliResult<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if name == "manifest.json" || (name.starts_with("traj_") && name.ends_with(".csv")) {
            fs::remove_file(e.path())?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitSummary {
    form: Form,
    lambda: f64,
    samples: usize,
    max_residual: f64,
    max_condition_number: f64,
    decoder_residual: f64,
    checksum: String,
    report: gce_core::embedding::FitReport,
}

/// Fit on `data` and write `out/model/` (blocks, pipeline, fit report).
pub fn cmd_fit(cfg: &ExperimentConfig, data: &Path) -> CliResult<PathBuf> {
    prepare_out(cfg)?;
    let ds = load_dataset(data)?;
    let fitted = fit_pipeline(cfg, &ds, cfg.form, cfg.seed)?;
    let dir = cfg.out.join("model");
    save_bundle(&dir, &fitted, cfg, &ds.env)?;
    let summary = FitSummary {
        form: cfg.form,
        lambda: fitted.model.lambda(),
        samples: fitted.report.samples,
        max_residual: fitted.report.max_residual(),
        max_condition_number: fitted.report.max_condition_number(),
        decoder_residual: fitted.decoder_residual,
        checksum: fitted.model.checksum(),
        report: fitted.report,
    };
    write_json(&dir.join("fit_report.json"), &summary)?;
    Ok(dir)
}

/// NRMSE of model rollouts on `data` (or on freshly generated held-out
/// trajectories) for steps `1..=eval_horizon`; writes `out/predict.csv`.
pub fn cmd_eval_predict(cfg: &ExperimentConfig, model: &Path, data: Option<&Path>) -> CliResult<PathBuf> {
    prepare_out(cfg)?;
    let bundle = load_bundle(model)?;
    let test = match data {
        Some(d) => load_dataset(d)?,
        None => {
            let env = Environment::from_json(&bundle.pipeline.environment)?;
            let policy = ActionPolicy::Random {
                amplitude: cfg.excitation,
            };
            let steps = cfg.steps.max(cfg.eval_horizon);
            generate_dataset(&env, cfg.eval_episodes, steps, policy, rng::derive_seed(cfg.seed, "test", 0))?
        }
    };
    if test.graph != *bundle.model.graph() {
        return Err(CliError::config("test data and model graphs differ"));
    }
    let curve = prediction_nrmse(
        &bundle.model,
        &bundle.map,
        &bundle.pipeline.actions,
        &bundle.pipeline.decoder,
        &test,
        cfg.eval_horizon,
    )?;
    let mut csv = Csv::new(&cfg.hash(), &["step", "nrmse_mean", "nrmse_std", "nrmse_pooled"]);
    for s in &curve.steps {
        if !(s.mean.is_finite() && s.pooled.is_finite()) {
            return Err(CliError::Numerical(format!("non-finite prediction error at step {}", s.step)));
        }
        csv.row(&[Cell::Int(s.step as u64), Cell::Num(s.mean), Cell::Num(s.std), Cell::Num(s.pooled)]);
    }
    let path = cfg.out.join("predict.csv");
    csv.write(&path)?;
    Ok(path)
}

/// Run the configured control protocol for `eval_episodes` episodes; writes
/// `out/control.csv` with one row per episode and `mean`/`std` summary rows.
pub fn cmd_control(cfg: &ExperimentConfig, model: &Path) -> CliResult<PathBuf> {
    prepare_out(cfg)?;
    let bundle = load_bundle(model)?;
    let env = Environment::from_json(&bundle.pipeline.environment)?;
    if env.graph() != bundle.model.graph() {
        return Err(CliError::config("environment and model graphs differ"));
    }
    if env.obs_dim() != bundle.map.observation_dim() || env.action_dim() != bundle.pipeline.actions.action_dim() {
        return Err(CliError::config("environment and model dimensions differ"));
    }
    let problem = control_problem(&env, cfg, &bundle.map, &bundle.pipeline.actions)?;
    let control_seed = rng::derive_seed(cfg.seed, "control", 0);
    let outcomes = (0..cfg.eval_episodes as u64)
        .into_par_iter()
        .map(|e| control_episode(&env, &bundle, &problem, cfg, control_seed, e))
        .collect::<CliResult<Vec<EpisodeOutcome>>>()?;
    let path = cfg.out.join("control.csv");
    control_csv(cfg, &outcomes).write(&path)?;
    Ok(path)
}

pub fn control_csv(cfg: &ExperimentConfig, outcomes: &[EpisodeOutcome]) -> Csv {
    let mut csv = Csv::new(&cfg.hash(), &["episode", "cost", "error", "free_error"]);
    for (e, o) in outcomes.iter().enumerate() {
        csv.row(&[Cell::Int(e as u64), Cell::Num(o.cost), Cell::Num(o.error), Cell::Num(o.free_error)]);
    }
    let col = |f: fn(&EpisodeOutcome) -> f64| mean_std(&outcomes.iter().map(f).collect::<Vec<_>>());
    let (c, e, f) = (col(|o| o.cost), col(|o| o.error), col(|o| o.free_error));
    csv.row(&[Cell::Text("mean"), Cell::Num(c.0), Cell::Num(e.0), Cell::Num(f.0)]);
    csv.row(&[Cell::Text("std"), Cell::Num(c.1), Cell::Num(e.1), Cell::Num(f.1)]);
    csv
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    FittingNumber,
    Noise,
    Bandwidth,
    FeatureDim,
    Form,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "fitting_number" | "fitting-number" => Ok(Axis::FittingNumber),
            "noise" => Ok(Axis::Noise),
            "bandwidth" => Ok(Axis::Bandwidth),
            "feature_dim" | "feature-dim" => Ok(Axis::FeatureDim),
            "form" => Ok(Axis::Form),
            other => Err(CliError::config(format!(
                "unknown sweep axis '{other}' (fitting_number, noise, bandwidth, feature_dim, form)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AxisValue {
    Count(usize),
    Real(f64),
    Form(Form),
}

impl AxisValue {
    fn label(&self) -> String {
        match self {
            AxisValue::Count(v) => v.to_string(),
            AxisValue::Real(v) => v.to_string(),
            AxisValue::Form(f) => f.name().to_string(),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::FittingNumber => "fitting_number",
            Axis::Noise => "noise",
            Axis::Bandwidth => "bandwidth",
            Axis::FeatureDim => "feature_dim",
            Axis::Form => "form",
        }
    }

    pub fn values(self) -> Vec<AxisValue> {
        match self {
            Axis::FittingNumber => [1, 4, 8, 16, 32].map(AxisValue::Count).to_vec(),
            Axis::Noise => [0.0, 0.02, 0.05, 0.1, 0.2].map(AxisValue::Real).to_vec(),
            Axis::Bandwidth => [0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0].map(AxisValue::Real).to_vec(),
            Axis::FeatureDim => [8, 16, 32, 64].map(AxisValue::Count).to_vec(),
            Axis::Form => Form::ALL.map(AxisValue::Form).to_vec(),
        }
    }

    /// The cell configuration and the forms evaluated in it.
    fn apply(self, cfg: &ExperimentConfig, v: &AxisValue) -> CliResult<(ExperimentConfig, Vec<Form>)> {
        let mut c = cfg.clone();
        let mut forms = cfg.sweep.forms.clone();
        match (self, v) {
            (Axis::FittingNumber, AxisValue::Count(k)) => c.fitting_number = *k,
            (Axis::Noise, AxisValue::Real(x)) => c.noise = *x,
            (Axis::Bandwidth, AxisValue::Real(x)) => {
                c.potential = match c.potential {
                    GibbsPotential::Gaussian { .. } => GibbsPotential::Gaussian { sigma: *x },
                    GibbsPotential::Laplace { .. } => GibbsPotential::Laplace { scale: *x },
                    GibbsPotential::VonMisesFisher { .. } => {
                        return Err(CliError::config("the bandwidth axis needs a gaussian or laplace potential"))
                    }
                }
            }
            (Axis::FeatureDim, AxisValue::Count(k)) => match &mut c.features {
                FeatureConfig::RandomFourier { dim, .. } => *dim = *k,
                _ => return Err(CliError::config("the feature_dim axis needs random Fourier features")),
            },
            (Axis::Form, AxisValue::Form(f)) => forms = vec![*f],
            _ => unreachable!("axis values match their axis"),
        }
        c.validate()?;
        Ok((c, forms))
    }
}

/// Per-replicate metric values of one (axis value, form) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: AxisValue,
    pub form: Form,
    pub values: Vec<f64>,
}

/// Evaluate every cell of a sweep. Replicate `r` uses the same environment,
/// training and test trajectories in every cell, so cells are paired.
/// Training data are noisy when the cell says so; test data are clean.
pub fn sweep_cells(cfg: &ExperimentConfig, axis: Axis) -> CliResult<Vec<SweepCell>> {
    let cells = axis
        .values()
        .into_iter()
        .map(|v| axis.apply(cfg, &v).map(|(c, forms)| (v, c, forms)))
        .collect::<CliResult<Vec<_>>>()?;
    let per_replicate = (0..cfg.sweep.replicates as u64)
        .into_par_iter()
        .map(|r| -> CliResult<Vec<f64>> {
            let rep = rng::derive_seed(cfg.seed, "replicate", r);
            let env = cfg.environment.build(environment_seed(rep))?;
            let policy = ActionPolicy::Random {
                amplitude: cfg.excitation,
            };
            let steps = cfg.steps.max(cfg.sweep.step);
            let test = generate_dataset(&env, cfg.sweep.test_episodes, steps, policy, rng::derive_seed(rep, "test", 0))?;
            let mut out = Vec::new();
            for (_, c, forms) in &cells {
                let train = generate(c, &env, c.fitting_number, rng::derive_seed(rep, "train", 0))?;
                for &form in forms {
                    let f = fit_pipeline(c, &train, form, rep)?;
                    let curve = prediction_nrmse(&f.model, &f.map, &f.proj, &f.decoder, &test, c.sweep.step)?;
                    out.push(curve.at(c.sweep.step).expect("step within horizon").pooled);
                }
            }
            Ok(out)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut result = Vec::new();
    let mut k = 0;
    for (v, _, forms) in &cells {
        for &form in forms {
            result.push(SweepCell {
                value: v.clone(),
                form,
                values: per_replicate.iter().map(|rep| rep[k]).collect(),
            });
            k += 1;
        }
    }
    Ok(result)
}

/// Writes `out/sweep_<axis>.csv` in long format.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: Axis) -> CliResult<PathBuf> {
    prepare_out(cfg)?;
    let cells = sweep_cells(cfg, axis)?;
    let metric = format!("nrmse_step{}", cfg.sweep.step);
    let mut csv = Csv::new(&cfg.hash(), &["axis", "axis_value", "form", "metric", "mean", "std", "replicates"]);
    for c in &cells {
        if c.values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(format!("non-finite metric in cell {} / {}", c.value.label(), c.form)));
        }
        let (m, s) = mean_std(&c.values);
        csv.row(&[
            Cell::Text(axis.name()),
            Cell::Text(&c.value.label()),
            Cell::Text(c.form.name()),
            Cell::Text(&metric),
            Cell::Num(m),
            Cell::Num(s),
            Cell::Int(c.values.len() as u64),
        ]);
    }
    let path = cfg.out.join(format!("sweep_{}.csv", axis.name()));
    csv.write(&path)?;
    Ok(path)
}
