//! Second-order voltage dynamics on a random power network.
//!
//! Per node: `V̈ᵢ = −a V̇ᵢ − b Σ_{j∈N(i)} (Vᵢ − Vⱼ) − c_r (Vᵢ − 1) + uᵢ·[gen] + wᵢ·[load]`
//! with `wᵢ ~ N(0, noise_std²)`, integrated by semi-implicit Euler.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::Graph;
use crate::rng::{self, StreamRng};
use crate::Frame;

pub const V_REF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub edge_prob: f64,
    pub generator_ratio_min: f64,
    pub generator_ratio_max: f64,
    pub damping: f64,
    pub coupling: f64,
    pub restoring: f64,
    pub dt: f64,
    /// Std of the load disturbance, p.u./s².
    pub noise_std: f64,
    /// Initial voltages are uniform on `[1 − spread, 1 + spread]`.
    pub init_spread: f64,
    pub max_retries: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nodes_min: 100,
            nodes_max: 150,
            edge_prob: 0.15,
            generator_ratio_min: 0.2,
            generator_ratio_max: 0.5,
            damping: 1.0,
            coupling: 2.0,
            restoring: 0.5,
            dt: 0.05,
            noise_std: 0.0,
            init_spread: 0.2,
            max_retries: 1000,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_min < 2 || self.nodes_max < self.nodes_min {
            return Err(Error::InvalidArgument("grid node range must satisfy 2 <= min <= max".into()));
        }
        if !(0.2..=0.5).contains(&self.generator_ratio_min)
            || !(0.2..=0.5).contains(&self.generator_ratio_max)
            || self.generator_ratio_max < self.generator_ratio_min
        {
            return Err(Error::InvalidArgument("generator ratio range must lie within [0.2, 0.5]".into()));
        }
        let nonneg = [self.damping, self.coupling, self.restoring, self.noise_std, self.init_spread];
        if !(self.dt > 0.0) || nonneg.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("grid parameters must be finite, nonnegative, dt positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub config: GridConfig,
    pub graph: Graph,
    pub generators: Vec<bool>,
}

impl Grid {
    /// Random instance: node count, topology and generator set all derive from `seed`.
    pub fn random(config: GridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "grid-instance", 0);
        let n = r.random_range(config.nodes_min..=config.nodes_max);
        let graph = Graph::erdos_renyi(n, config.edge_prob, rng::derive_seed(seed, "grid-graph", 0), config.max_retries)?;
        let ratio = r.random_range(config.generator_ratio_min..=config.generator_ratio_max);
        let count = ((ratio * n as f64).round() as usize).clamp(1, n);
        let mut generators = vec![false; n];
        for i in sample(&mut r, n, count) {
            generators[i] = true;
        }
        Ok(Grid { config, graph, generators })
    }

    pub fn new(config: GridConfig, graph: Graph, generators: Vec<bool>) -> Result<Self> {
        config.validate()?;
        check_dim("generator mask", graph.n(), generators.len())?;
        Ok(Grid { config, graph, generators })
    }

    pub fn initial_state(&self, rng: &mut StreamRng) -> Frame {
        let s = self.config.init_spread;
        (0..self.graph.n())
            .map(|_| DVector::from_vec(vec![V_REF + rng.random_range(-s..=s), 0.0]))
            .collect()
    }

    pub fn fixed_point(&self) -> Frame {
        vec![DVector::from_vec(vec![V_REF, 0.0]); self.graph.n()]
    }

    pub fn step(&self, state: &Frame, u: &Frame, rng: &mut StreamRng) -> Result<Frame> {
        let c = &self.config;
        let n = self.graph.n();
        check_dim("grid state", n, state.len())?;
        check_dim("grid action frame", n, u.len())?;
        for (s, a) in state.iter().zip(u) {
            check_dim("grid observation", 2, s.len())?;
            check_dim("grid action", 1, a.len())?;
            if !(s.iter().all(|v| v.is_finite()) && a[0].is_finite()) {
                return Err(Error::NonFinite("grid state or action".into()));
            }
        }
        let noise = if c.noise_std > 0.0 {
            Some(Normal::new(0.0, c.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        } else {
            None
        };
        Ok((0..n)
            .map(|i| {
                let (v, vd) = (state[i][0], state[i][1]);
                let coupling: f64 = self.graph.neighbors(i).map(|j| v - state[j][0]).sum();
                let mut acc = -c.damping * vd - c.coupling * coupling - c.restoring * (v - V_REF);
                if self.generators[i] {
                    acc += u[i][0];
                } else if let Some(d) = &noise {
                    acc += d.sample(rng);
                }
                let vd_next = vd + c.dt * acc;
                DVector::from_vec(vec![v + c.dt * vd_next, vd_next])
            })
            .collect())
    }

    /// Continuous-time system matrix on `[V − 1; V̇]`.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let c = &self.config;
        let n = self.graph.n();
        let stiffness = self.graph.laplacian() * c.coupling + DMatrix::identity(n, n) * c.restoring;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
        m.view_mut((n, 0), (n, n)).copy_from(&(-stiffness));
        m.view_mut((n, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * -c.damping));
        m
    }

    /// `‖V − 1‖₂` over all nodes.
    pub fn deviation(state: &Frame) -> f64 {
        state.iter().map(|s| (s[0] - V_REF).powi(2)).sum::<f64>().sqrt()
    }
}
