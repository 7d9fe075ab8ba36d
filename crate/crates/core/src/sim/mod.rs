//! Ground-truth environments and dataset generation.

mod grid;
mod linear;
mod rope;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::coordinate_std;
use crate::rng::{self, StreamRng};
use crate::Frame;

pub use grid::{Grid, GridConfig, V_REF};
pub use linear::{LinearConfig, LinearGraphSystem, LinearWeights, WeightSpec};
pub use rope::{Rope, RopeConfig};

/// Environment description; building it with a seed yields an [`Environment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Rope(RopeConfig),
    Grid(GridConfig),
    Linear(LinearConfig),
}

impl EnvConfig {
    pub fn build(&self, seed: u64) -> Result<Environment> {
        Ok(match self {
            EnvConfig::Rope(c) => Environment::Rope(Rope::new(c.clone())?),
            EnvConfig::Grid(c) => Environment::Grid(Grid::random(c.clone(), seed)?),
            EnvConfig::Linear(c) => Environment::Linear(LinearGraphSystem::random(c, seed)?),
        })
    }
}

/// A concrete environment instance. Serializes with its graph (and generator
/// set or operators), so it can be rebuilt exactly from a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Environment {
    Rope(Rope),
    Grid(Grid),
    Linear(LinearGraphSystem),
}

impl Environment {
    pub fn graph(&self) -> &Graph {
        match self {
            Environment::Rope(r) => r.graph(),
            Environment::Grid(g) => &g.graph,
            Environment::Linear(l) => &l.graph,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Environment::Rope(_) => 4,
            Environment::Grid(_) => 2,
            Environment::Linear(l) => l.state_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Environment::Rope(_) | Environment::Grid(_) => 1,
            Environment::Linear(l) => l.action_dim(),
        }
    }

    /// Whether actions at node `i` have any effect.
    pub fn actuated(&self, i: usize) -> bool {
        match self {
            Environment::Rope(_) => i == 0,
            Environment::Grid(g) => g.generators[i],
            Environment::Linear(_) => true,
        }
    }

    pub fn initial_state(&self, rng: &mut StreamRng) -> Frame {
        match self {
            Environment::Rope(r) => r.initial_state(rng),
            Environment::Grid(g) => g.initial_state(rng),
            Environment::Linear(l) => l.initial_state(rng),
        }
    }

    /// One step; the state is the observation for every environment here.
    pub fn step(&self, obs: &Frame, u: &Frame, rng: &mut StreamRng) -> Result<Frame> {
        match self {
            Environment::Rope(r) => r.step(obs, u),
            Environment::Grid(g) => g.step(obs, u, rng),
            Environment::Linear(l) => l.step(obs, u, rng),
        }
    }

    pub fn zero_action(&self) -> Frame {
        vec![DVector::zeros(self.action_dim()); self.graph().n()]
    }

    /// Zero every action entry at nodes that are not actuated.
    pub fn mask_actions(&self, u: &mut Frame) {
        for (i, a) in u.iter_mut().enumerate() {
            if !self.actuated(i) {
                a.fill(0.0);
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("environment serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v.clone())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionPolicy {
    Zero,
    /// I.i.d. uniform on `[-amplitude, amplitude]` at actuated nodes.
    Random { amplitude: f64 },
}

impl ActionPolicy {
    fn sample(&self, env: &Environment, rng: &mut StreamRng) -> Frame {
        let mut u = env.zero_action();
        if let ActionPolicy::Random { amplitude } = *self {
            for (i, a) in u.iter_mut().enumerate() {
                if env.actuated(i) {
                    a.iter_mut().for_each(|v| *v = rng.random_range(-amplitude..=amplitude));
                }
            }
        }
        u
    }
}

/// Roll out one episode from `x0`.
pub fn simulate_episode(env: &Environment, x0: Frame, steps: usize, policy: &ActionPolicy, rng: &mut StreamRng) -> Result<Trajectory> {
    let mut observations = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    observations.push(x0);
    for _ in 0..steps {
        let u = policy.sample(env, rng);
        let next = env.step(observations.last().expect("nonempty"), &u, rng)?;
        observations.push(next);
        actions.push(u);
    }
    Ok(Trajectory {
        seed: 0,
        observations,
        actions,
    })
}

/// `episodes` trajectories of `steps` transitions. Episode `e` draws its
/// initial state, actions and noise from its own stream derived from
/// `(master_seed, e)`, so the result does not depend on the thread count.
pub fn generate_dataset(env: &Environment, episodes: usize, steps: usize, policy: ActionPolicy, master_seed: u64) -> Result<Dataset> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    if let ActionPolicy::Random { amplitude } = policy {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument("excitation amplitude must be finite and nonnegative".into()));
        }
    }
    let trajectories = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let seed = rng::derive_seed(master_seed, "episode", e as u64);
            let mut r = rng::seeded(seed);
            let x0 = env.initial_state(&mut r);
            let mut t = simulate_episode(env, x0, steps, &policy, &mut r)?;
            t.seed = seed;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        env.graph().clone(),
        env.obs_dim(),
        env.action_dim(),
        trajectories,
        env.to_json(),
        master_seed,
    )
}

/// Additive Gaussian observation noise with per-coordinate std equal to
/// `fraction` times the pooled per-coordinate std of the clean data.
pub fn inject_noise(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise fraction must be >= 0, got {fraction}")));
    }
    if fraction == 0.0 {
        return Ok(ds.clone());
    }
    let std = coordinate_std(ds.observation_vectors(), ds.obs_dim) * fraction;
    let dists = std
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let trajectories = ds
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let mut r = rng::stream(seed, "observation-noise", k as u64);
            let observations = t
                .observations
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|o| DVector::from_fn(o.len(), |c, _| o[c] + dists[c].sample(&mut r)))
                        .collect()
                })
                .collect();
            Trajectory {
                observations,
                ..t.clone()
            }
        })
        .collect();
    Ok(Dataset {
        trajectories,
        ..ds.clone()
    })
}
