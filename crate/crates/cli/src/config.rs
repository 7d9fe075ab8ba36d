//! Experiment configuration: presets, JSON files and flag overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use gce_core::embedding::{Form, Ridge};
use gce_core::mean_field::GibbsPotential;
use gce_core::sim::{EnvConfig, GridConfig, LinearConfig, RopeConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Rope,
    Grid,
    Linear,
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "rope" => Ok(Preset::Rope),
            "grid" => Ok(Preset::Grid),
            "linear" => Ok(Preset::Linear),
            other => Err(CliError::config(format!("unknown preset '{other}' (rope, grid, linear)"))),
        }
    }
}

/// Observation feature map. Random Fourier frequencies are drawn from a
/// stream derived from the master seed; a `null` bandwidth is set by the
/// median heuristic on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    RandomFourier { dim: usize, bandwidth: Option<f64>, augment: bool },
    Polynomial { degree: usize, augment: bool },
    Identity { augment: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub horizon: usize,
    /// Re-plan after this many steps; `None` is open loop.
    pub feedback: Option<usize>,
    /// `Q1 = q1·I` on observation features.
    pub q1: f64,
    /// `Q2 = q2·I` on action features.
    pub q2: f64,
    /// Rope only: horizontal position of the hanging target configuration.
    pub target_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Paired replicates per cell.
    pub replicates: usize,
    /// Forms compared in every cell (ignored by the `form` axis, which uses all four).
    pub forms: Vec<Form>,
    /// Rollout step at which prediction NRMSE is reported.
    pub step: usize,
    /// Held-out trajectories per replicate.
    pub test_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub environment: EnvConfig,
    pub features: FeatureConfig,
    /// Random action projection of this size; `None` uses raw actions.
    pub action_features: Option<usize>,
    pub form: Form,
    pub potential: GibbsPotential,
    pub ridge: Ridge,
    pub decoder_ridge: f64,
    /// Trajectories used for identification.
    pub fitting_number: usize,
    /// Trajectories generated by `generate`.
    pub episodes: usize,
    pub steps: usize,
    /// Uniform excitation amplitude at actuated nodes during generation.
    pub excitation: f64,
    /// Observation noise as a fraction of the per-coordinate std.
    pub noise: f64,
    pub control: ControlConfig,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub sweep: SweepConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let sweep = SweepConfig {
            replicates: 10,
            forms: vec![Form::Dense, Form::Hom, Form::HomMean],
            step: 50,
            test_episodes: 10,
        };
        let control = ControlConfig {
            horizon: 40,
            feedback: None,
            q1: 1.0,
            q2: 1e-3,
            target_x: 0.2,
        };
        let base = ExperimentConfig {
            preset: p,
            environment: EnvConfig::Rope(RopeConfig::default()),
            features: FeatureConfig::RandomFourier {
                dim: 128,
                bandwidth: Some(1.0),
                augment: true,
            },
            action_features: None,
            form: Form::Dense,
            potential: GibbsPotential::Gaussian { sigma: 1.0 },
            ridge: Ridge::Relative(1e-3),
            decoder_ridge: 1e-6,
            fitting_number: 16,
            episodes: 32,
            steps: 100,
            excitation: 5.0,
            noise: 0.0,
            control,
            eval_episodes: 200,
            eval_horizon: 100,
            sweep,
            seed: 0,
            out: PathBuf::from("results"),
        };
        match p {
            Preset::Rope => base,
            Preset::Grid => ExperimentConfig {
                environment: EnvConfig::Grid(GridConfig::default()),
                features: FeatureConfig::Polynomial {
                    degree: 1,
                    augment: true,
                },
                form: Form::HomMean,
                potential: GibbsPotential::Gaussian { sigma: 1e-3 },
                ridge: Ridge::default(),
                fitting_number: 20,
                episodes: 20,
                excitation: 1.0,
                control: ControlConfig {
                    horizon: 100,
                    feedback: Some(50),
                    ..base.control.clone()
                },
                eval_episodes: 50,
                sweep: SweepConfig {
                    test_episodes: 50,
                    ..base.sweep.clone()
                },
                ..base
            },
            Preset::Linear => ExperimentConfig {
                environment: EnvConfig::Linear(LinearConfig::default()),
                features: FeatureConfig::Identity { augment: false },
                ridge: Ridge::default(),
                excitation: 1.0,
                eval_episodes: 20,
                ..base
            },
        }
    }

    /// Preset defaults, overlaid with a (possibly partial) JSON object. The
    /// object's `preset` key, if present, selects the base.
    pub fn from_json(v: &Value, default_preset: Preset) -> CliResult<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| CliError::config("configuration must be a JSON object"))?;
        let preset = match obj.get("preset") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| CliError::config(format!("preset: {e}")))?,
            None => default_preset,
        };
        let mut base = serde_json::to_value(Self::preset(preset)).expect("config serializes");
        // environment and feature variants are replaced whole when their kind changes
        for key in ["environment", "features"] {
            if let (Some(new), Some(old)) = (obj.get(key), base.get(key)) {
                if new.get("kind").is_some() && new.get("kind") != old.get("kind") {
                    base[key] = Value::Object(Default::default());
                }
            }
        }
        merge(&mut base, v);
        let cfg: ExperimentConfig = serde_json::from_value(base).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_preset: Preset) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&v, default_preset)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.fitting_number == 0 {
            return Err(CliError::config("fitting number must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(CliError::config("episodes must be at least 1"));
        }
        if self.steps == 0 {
            return Err(CliError::config("steps must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(CliError::config("noise fraction must be finite and nonnegative"));
        }
        if !(self.excitation >= 0.0 && self.excitation.is_finite()) {
            return Err(CliError::config("excitation must be finite and nonnegative"));
        }
        if !(self.decoder_ridge >= 0.0 && self.decoder_ridge.is_finite()) {
            return Err(CliError::config("decoder ridge must be finite and nonnegative"));
        }
        let c = &self.control;
        if c.horizon == 0 {
            return Err(CliError::config("control horizon must be at least 1"));
        }
        if c.feedback.is_some_and(|k| k == 0 || k > c.horizon) {
            return Err(CliError::config("feedback step must lie in 1..=horizon"));
        }
        if !(c.q1 >= 0.0 && c.q1.is_finite() && c.q2 > 0.0 && c.q2.is_finite()) {
            return Err(CliError::config("need q1 >= 0 and q2 > 0"));
        }
        if self.eval_horizon == 0 {
            return Err(CliError::config("evaluation horizon must be at least 1"));
        }
        if self.sweep.replicates == 0 || self.sweep.step == 0 || self.sweep.test_episodes == 0 {
            return Err(CliError::config("sweep replicates, step and test episodes must be positive"));
        }
        if let FeatureConfig::RandomFourier { dim, bandwidth, .. } = self.features {
            if dim == 0 || bandwidth.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
                return Err(CliError::config("random Fourier features need dim > 0 and a positive bandwidth"));
            }
        }
        if self.action_features == Some(0) {
            return Err(CliError::config("action feature dimension must be positive"));
        }
        self.potential.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the output path removed, so results
    /// written to different directories carry the same tag.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
