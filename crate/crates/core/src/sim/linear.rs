//! Linear graph system with known operators:
//! `x_{t+1}^i = A Σ_{j∈ℰ(i)} w_{ij} x_t^j + B u_t^i + ε`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::Graph;
use crate::linalg::spectral_radius;
use crate::mean_field::{aggregate_history, all_weights, GibbsPotential, WeightVector};
use crate::rng::{self, StreamRng};
use crate::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearWeights {
    /// Fixed weights, one simplex per node over `ℰ(i)`.
    Fixed { weights: Vec<Vec<f64>> },
    /// State-dependent Gibbs weights computed from the current state.
    Gibbs { potential: GibbsPotential },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGraphSystem {
    pub graph: Graph,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub weights: LinearWeights,
    pub noise_std: f64,
    /// Initial states are uniform on `[-init_scale, init_scale]` per coordinate.
    pub init_scale: f64,
}

/// How the weight simplices of a random system are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Uniform,
    /// `w ∝ exp(spread · z)` with `z ~ N(0, 1)`.
    Random { spread: f64 },
    Gibbs { potential: GibbsPotential },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub nodes: usize,
    pub edge_prob: f64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub spectral_radius: f64,
    pub weights: WeightSpec,
    pub noise_std: f64,
    pub init_scale: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            nodes: 5,
            edge_prob: 0.5,
            state_dim: 2,
            action_dim: 1,
            spectral_radius: 0.9,
            weights: WeightSpec::Random { spread: 1.0 },
            noise_std: 0.0,
            init_scale: 1.0,
        }
    }
}

impl LinearGraphSystem {
    pub fn new(graph: Graph, a: DMatrix<f64>, b: DMatrix<f64>, weights: LinearWeights, noise_std: f64, init_scale: f64) -> Result<Self> {
        let dx = a.nrows();
        check_dim("A columns", dx, a.ncols())?;
        check_dim("B rows", dx, b.nrows())?;
        if let LinearWeights::Fixed { weights } = &weights {
            check_dim("weight rows", graph.n(), weights.len())?;
            for (i, w) in weights.iter().enumerate() {
                check_dim("weight simplex", graph.hood(i).len(), w.len())?;
                if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("weights of node {i} are not a simplex")));
                }
            }
        }
        if let LinearWeights::Gibbs { potential } = &weights {
            potential.validate()?;
        }
        if !(noise_std >= 0.0 && init_scale >= 0.0) {
            return Err(Error::InvalidArgument("noise and initial scale must be nonnegative".into()));
        }
        Ok(LinearGraphSystem {
            graph,
            a,
            b,
            weights,
            noise_std,
            init_scale,
        })
    }

    /// Random stable system: `A` Gaussian rescaled to the requested spectral
    /// radius, `B` Gaussian scaled by `1/√d_x`.
    pub fn random(cfg: &LinearConfig, seed: u64) -> Result<Self> {
        if !(cfg.spectral_radius > 0.0 && cfg.spectral_radius < 1.0) {
            return Err(Error::InvalidArgument("spectral radius must lie in (0, 1)".into()));
        }
        let graph = if cfg.nodes == 1 {
            Graph::single_node()
        } else {
            Graph::erdos_renyi(cfg.nodes, cfg.edge_prob, rng::derive_seed(seed, "linear-graph", 0), 1000)?
        };
        let mut r = rng::stream(seed, "linear-system", 0);
        let (dx, du) = (cfg.state_dim, cfg.action_dim);
        let mut gauss = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
        let raw: DMatrix<f64> = gauss(dx, dx);
        let a = &raw * (cfg.spectral_radius / spectral_radius(&raw).max(1e-12));
        let b: DMatrix<f64> = gauss(dx, du) / (dx as f64).sqrt();
        let weights = match cfg.weights {
            WeightSpec::Uniform => LinearWeights::Fixed {
                weights: (0..graph.n())
                    .map(|i| vec![1.0 / graph.hood(i).len() as f64; graph.hood(i).len()])
                    .collect(),
            },
            WeightSpec::Random { spread } => LinearWeights::Fixed {
                weights: (0..graph.n())
                    .map(|i| {
                        let raw: Vec<f64> = graph
                            .hood(i)
                            .iter()
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut r);
                                (spread * z).exp()
                            })
                            .collect();
                        let s: f64 = raw.iter().sum();
                        raw.iter().map(|w| w / s).collect()
                    })
                    .collect(),
            },
            WeightSpec::Gibbs { potential } => LinearWeights::Gibbs { potential },
        };
        Self::new(graph, a, b, weights, cfg.noise_std, cfg.init_scale)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn weights_at(&self, x: &Frame) -> Result<Vec<WeightVector>> {
        match &self.weights {
            LinearWeights::Fixed { weights } => Ok(weights
                .iter()
                .enumerate()
                .map(|(i, w)| WeightVector {
                    node: i,
                    neighbors: self.graph.hood(i).to_vec(),
                    weights: w.clone(),
                })
                .collect()),
            LinearWeights::Gibbs { potential } => all_weights(&self.graph, x, potential),
        }
    }

    /// True Dense history block `w_{ij} A` (fixed weights only).
    pub fn true_history_block(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        match &self.weights {
            LinearWeights::Fixed { weights } => Some(match self.graph.slot(i, j) {
                Some(s) => &self.a * weights[i][s],
                None => DMatrix::zeros(self.state_dim(), self.state_dim()),
            }),
            LinearWeights::Gibbs { .. } => None,
        }
    }

    /// True Dense action block `δ_{ij} B`.
    pub fn true_action_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        if i == j {
            self.b.clone()
        } else {
            DMatrix::zeros(self.state_dim(), self.action_dim())
        }
    }

    pub fn initial_state(&self, rng: &mut StreamRng) -> Frame {
        let s = self.init_scale;
        (0..self.graph.n())
            .map(|_| DVector::from_fn(self.state_dim(), |_, _| rng.random_range(-s..=s)))
            .collect()
    }

    pub fn step(&self, x: &Frame, u: &Frame, rng: &mut StreamRng) -> Result<Frame> {
        let n = self.graph.n();
        check_dim("linear state", n, x.len())?;
        check_dim("linear action frame", n, u.len())?;
        for (s, a) in x.iter().zip(u) {
            check_dim("linear state", self.state_dim(), s.len())?;
            check_dim("linear action", self.action_dim(), a.len())?;
        }
        let w = self.weights_at(x)?;
        let mixed = aggregate_history(&self.graph, x, &w)?;
        let noise = if self.noise_std > 0.0 {
            Some(Normal::new(0.0, self.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        } else {
            None
        };
        Ok(mixed
            .iter()
            .zip(u)
            .map(|(m, a)| {
                let mut next = &self.a * m + &self.b * a;
                if let Some(d) = &noise {
                    next.iter_mut().for_each(|v| *v += d.sample(rng));
                }
                next
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_in_zero_out() {
        let sys = LinearGraphSystem::random(&LinearConfig::default(), 1).unwrap();
        let n = sys.graph.n();
        let x = vec![DVector::zeros(2); n];
        let u = vec![DVector::zeros(1); n];
        assert_eq!(sys.step(&x, &u, &mut seeded(0)).unwrap(), x);
    }

    #[test]
    fn single_node_is_plain_linear_recursion() {
        let cfg = LinearConfig {
            nodes: 1,
            ..LinearConfig::default()
        };
        let sys = LinearGraphSystem::random(&cfg, 2).unwrap();
        let mut r = seeded(5);
        let mut x = sys.initial_state(&mut r);
        let mut y = x[0].clone();
        for t in 0..100 {
            let u = vec![DVector::from_element(1, (t as f64 * 0.3).sin())];
            x = sys.step(&x, &u, &mut r).unwrap();
            y = &sys.a * &y + &sys.b * &u[0];
            assert!((&x[0] - &y).norm() < 1e-12);
        }
    }

    #[test]
    fn random_system_has_requested_radius() {
        let sys = LinearGraphSystem::random(&LinearConfig::default(), 3).unwrap();
        assert!((spectral_radius(&sys.a) - 0.9).abs() < 1e-9);
        if let LinearWeights::Fixed { weights } = &sys.weights {
            for w in weights {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
