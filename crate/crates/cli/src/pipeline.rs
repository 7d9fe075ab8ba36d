//! Shared steps of the commands: building maps, fitting, persisting and
//! running control episodes.

use std::fs;
use std::path::Path;

use gce_core::control::{control_error, control_metrics, receding_horizon_control, ControlProblem, SolverOptions};
use gce_core::dataset::Dataset;
use gce_core::embedding::{fit, EmbeddingModel, FitConfig, FitReport, Form};
use gce_core::features::{median_heuristic, ActionProjection, Decoder, FeatureMap, FeatureSpec};
use gce_core::rng;
use gce_core::sim::{generate_dataset, inject_noise, ActionPolicy, Environment};
use gce_core::Frame;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FeatureConfig};
use crate::error::{CliError, CliResult};

pub const PIPELINE_FILE: &str = "pipeline.json";

/// Build the observation map; `train` supplies the median-heuristic bandwidth
/// when none is configured.
pub fn feature_map(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> CliResult<FeatureMap> {
    let obs_dim = train.obs_dim;
    Ok(match cfg.features {
        FeatureConfig::RandomFourier { dim, bandwidth, augment } => {
            let bandwidth = match bandwidth {
                Some(b) => b,
                None => median_bandwidth(train, augment, seed)?,
            };
            FeatureMap::sample_rff(obs_dim, dim, bandwidth, rng::derive_seed(seed, "features", 0), augment)?
        }
        FeatureConfig::Polynomial { degree, augment } => FeatureMap::polynomial(obs_dim, degree, augment)?,
        FeatureConfig::Identity { augment } => FeatureMap::identity(obs_dim, augment),
    })
}

/// Median pairwise distance of the map inputs over at most 1000 sampled
/// (trajectory, step, node) inputs.
fn median_bandwidth(train: &Dataset, augment: bool, seed: u64) -> CliResult<f64> {
    let inputs = FeatureMap::identity(train.obs_dim, augment);
    let mut samples = Vec::new();
    for t in &train.trajectories {
        for o in &t.observations {
            for i in 0..train.graph.n() {
                samples.push(inputs.node_input(&train.graph, o, i)?);
            }
        }
    }
    Ok(median_heuristic(&samples, 1000, rng::derive_seed(seed, "bandwidth", 0))?)
}

pub fn action_projection(cfg: &ExperimentConfig, action_dim: usize, seed: u64) -> CliResult<ActionProjection> {
    Ok(match cfg.action_features {
        None => ActionProjection::identity(action_dim),
        Some(d) => ActionProjection::random(action_dim, d, rng::derive_seed(seed, "action-features", 0))?,
    })
}

pub fn fit_config(cfg: &ExperimentConfig, form: Form) -> FitConfig {
    let fc = FitConfig::new(form).with_ridge(cfg.ridge);
    if form == Form::HomMean {
        fc.with_potential(cfg.potential)
    } else {
        fc
    }
}

/// Generate `episodes` trajectories with the configured excitation, then add
/// observation noise.
pub fn generate(cfg: &ExperimentConfig, env: &Environment, episodes: usize, seed: u64) -> CliResult<Dataset> {
    let policy = ActionPolicy::Random {
        amplitude: cfg.excitation,
    };
    let ds = generate_dataset(env, episodes, cfg.steps, policy, seed)?;
    Ok(inject_noise(&ds, cfg.noise, rng::derive_seed(seed, "noise", 0))?)
}

/// Everything needed to use a fitted model besides its operator blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub version: String,
    pub config: ExperimentConfig,
    pub features: FeatureSpec,
    pub actions: ActionProjection,
    pub decoder: Decoder,
    pub environment: serde_json::Value,
}

pub struct Fitted {
    pub model: EmbeddingModel,
    pub report: FitReport,
    pub map: FeatureMap,
    pub proj: ActionProjection,
    pub decoder: Decoder,
    pub decoder_residual: f64,
}

/// Fit maps, decoder and embedding on the first `fitting_number` trajectories.
pub fn fit_pipeline(cfg: &ExperimentConfig, ds: &Dataset, form: Form, seed: u64) -> CliResult<Fitted> {
    if ds.trajectories.len() < cfg.fitting_number {
        return Err(CliError::config(format!(
            "fitting number {} exceeds the {} trajectories in the dataset",
            cfg.fitting_number,
            ds.trajectories.len()
        )));
    }
    let train = ds.take(cfg.fitting_number);
    let map = feature_map(cfg, &train, seed)?;
    let proj = action_projection(cfg, ds.action_dim, seed)?;
    let (model, report) = fit(&train, &map, &proj, &fit_config(cfg, form))?;
    let mut feats = Vec::new();
    let mut obs = Vec::new();
    for t in &train.trajectories {
        for o in &t.observations {
            feats.extend(map.encode_frame(&train.graph, o)?);
            obs.extend(o.iter().cloned());
        }
    }
    let decoder = Decoder::fit(&feats, &obs, cfg.decoder_ridge)?;
    let decoder_residual = decoder.normal_equation_residual(&feats, &obs)?;
    if !model_is_finite(&model) || decoder.matrix.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("fitted operators contain non-finite values".into()));
    }
    Ok(Fitted {
        model,
        report,
        map,
        proj,
        decoder,
        decoder_residual,
    })
}

fn model_is_finite(m: &EmbeddingModel) -> bool {
    let n = m.graph().n();
    let finite = |b: Option<DMatrix<f64>>| b.is_none_or(|b| b.iter().all(|v| v.is_finite()));
    m.shared_history_operator().is_none_or(|b| b.iter().all(|v| v.is_finite()))
        && (0..n).all(|i| {
            m.graph()
                .neighbors(i)
                .chain(std::iter::once(i))
                .all(|j| finite(m.history_block(i, j)) && finite(m.action_block(i, j)))
        })
}

pub fn save_bundle(dir: &Path, fitted: &Fitted, cfg: &ExperimentConfig, env: &serde_json::Value) -> CliResult<()> {
    fitted.model.save(dir)?;
    let p = Pipeline {
        version: crate::VERSION.into(),
        config: cfg.clone(),
        features: fitted.map.spec().clone(),
        actions: fitted.proj.clone(),
        decoder: fitted.decoder.clone(),
        environment: env.clone(),
    };
    write_json(&dir.join(PIPELINE_FILE), &p)
}

pub struct Bundle {
    pub model: EmbeddingModel,
    pub pipeline: Pipeline,
    pub map: FeatureMap,
}

pub fn load_bundle(dir: &Path) -> CliResult<Bundle> {
    let model = EmbeddingModel::load(dir)?;
    let pipeline: Pipeline = read_json(&dir.join(PIPELINE_FILE))?;
    let map = FeatureMap::from_spec(pipeline.features.clone())?;
    Ok(Bundle { model, pipeline, map })
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::Io(format!("no dataset at {}", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

/// Target observation per environment: the grid's nominal operating point,
/// the rope hanging straight below `target_x`, and all-ones for the linear
/// system.
pub fn control_target(env: &Environment, cfg: &ExperimentConfig) -> Frame {
    match env {
        Environment::Grid(g) => g.fixed_point(),
        Environment::Rope(r) => r.equilibrium(cfg.control.target_x),
        Environment::Linear(l) => vec![DVector::from_element(l.state_dim(), 1.0); l.graph.n()],
    }
}

pub fn control_problem(env: &Environment, cfg: &ExperimentConfig, map: &FeatureMap, proj: &ActionProjection) -> CliResult<ControlProblem> {
    let target = map.encode_frame(env.graph(), &control_target(env, cfg))?;
    let d = map.feature_dim();
    let da = proj.feature_dim();
    let c = &cfg.control;
    let mut p = ControlProblem::new(c.horizon, target, da)
        .with_costs(DMatrix::identity(d, d) * c.q1, DMatrix::identity(da, da) * c.q2)
        .with_actuated((0..env.graph().n()).map(|i| env.actuated(i)).collect());
    if let Some(k) = c.feedback {
        p = p.with_feedback(k);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub cost: f64,
    pub error: f64,
    /// Error of the uncontrolled system from the same start.
    pub free_error: f64,
}

/// One control episode from an initial state drawn from stream `index`.
pub fn control_episode(
    env: &Environment,
    bundle: &Bundle,
    problem: &ControlProblem,
    cfg: &ExperimentConfig,
    seed: u64,
    index: u64,
) -> CliResult<EpisodeOutcome> {
    let mut r = rng::stream(seed, "control-episode", index);
    let x0 = env.initial_state(&mut r);
    let target = control_target(env, cfg);
    let result = receding_horizon_control(
        env,
        &bundle.model,
        &bundle.map,
        &bundle.pipeline.actions,
        problem,
        &x0,
        &mut r,
        &SolverOptions::default(),
    )?;
    let m = control_metrics(&result, &target)?;
    let mut free_rng = rng::stream(seed, "free-response", index);
    let mut o = x0;
    for _ in 0..problem.horizon {
        o = env.step(&o, &env.zero_action(), &mut free_rng)?;
    }
    let free_error = control_error(&o, &target)?;
    if !(m.cost.is_finite() && m.error.is_finite()) {
        return Err(CliError::Numerical("control produced a non-finite cost".into()));
    }
    Ok(EpisodeOutcome {
        cost: m.cost,
        error: m.error,
        free_error,
    })
}
