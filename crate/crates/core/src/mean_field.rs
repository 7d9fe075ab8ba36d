//! Boltzmann–Gibbs neighbour weights and weighted aggregation of history
//! features.
//!
//! For node `i` the weight on neighbour `j ∈ ℰ(i)` is the softmax of the
//! pair potential `f(ψᵢ, ψⱼ)` over the inclusive neighbourhood. The softmax is
//! evaluated with the maximum potential subtracted, since small bandwidths
//! push the raw exponents far outside the floating-point range.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::Graph;
use crate::Frame;

/// Kernel-based pair potential (negative energy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GibbsPotential {
    /// `−‖ψᵢ − ψⱼ‖₂² / (2σ²)`
    Gaussian { sigma: f64 },
    /// `−‖ψᵢ − ψⱼ‖₁ / λ`
    Laplace { scale: f64 },
    /// `κ · cos∠(ψᵢ, ψⱼ)`
    VonMisesFisher { kappa: f64 },
}

impl GibbsPotential {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GibbsPotential::Gaussian { sigma } => sigma.is_finite() && sigma > 0.0,
            GibbsPotential::Laplace { scale } => scale.is_finite() && scale > 0.0,
            GibbsPotential::VonMisesFisher { kappa } => kappa.is_finite() && kappa >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid potential hyperparameter: {self:?}")))
        }
    }

    pub fn evaluate(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        check_dim("potential operands", a.len(), b.len())?;
        Ok(match *self {
            GibbsPotential::Gaussian { sigma } => -(a - b).norm_squared() / (2.0 * sigma * sigma),
            GibbsPotential::Laplace { scale } => -(a - b).lp_norm(1) / scale,
            GibbsPotential::VonMisesFisher { kappa } => {
                let (na, nb) = (a.norm(), b.norm());
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::ZeroVector);
                }
                kappa * a.dot(b) / (na * nb)
            }
        })
    }
}

/// Simplex weights of one node over its inclusive neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(g: &Graph, node: usize) -> Result<Self> {
        let neighbors = g.inclusive_neighborhood(node)?.to_vec();
        let w = 1.0 / neighbors.len() as f64;
        Ok(WeightVector {
            node,
            weights: vec![w; neighbors.len()],
            neighbors,
        })
    }

    pub fn weight_of(&self, j: usize) -> f64 {
        self.neighbors
            .binary_search(&j)
            .map(|k| self.weights[k])
            .unwrap_or(0.0)
    }
}

pub fn gibbs_weights(g: &Graph, features: &[DVector<f64>], potential: &GibbsPotential, i: usize) -> Result<WeightVector> {
    check_dim("feature frame", g.n(), features.len())?;
    let neighbors = g.inclusive_neighborhood(i)?.to_vec();
    let energies = neighbors
        .iter()
        .map(|&j| potential.evaluate(&features[i], &features[j]))
        .collect::<Result<Vec<f64>>>()?;
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("Gibbs potentials".into()));
    }
    let mut weights: Vec<f64> = energies.iter().map(|e| (e - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= z;
    }
    Ok(WeightVector {
        node: i,
        neighbors,
        weights,
    })
}

/// Weights for every node, computed in parallel with per-node results kept in
/// node order.
pub fn all_weights(g: &Graph, features: &[DVector<f64>], potential: &GibbsPotential) -> Result<Vec<WeightVector>> {
    check_dim("feature frame", g.n(), features.len())?;
    (0..g.n())
        .into_par_iter()
        .map(|i| gibbs_weights(g, features, potential, i))
        .collect()
}

/// `h̄ⁱ = Σ_{j∈ℰ(i)} αⁱʲ ψʲ`, summed in ascending neighbour order.
pub fn aggregate_history(g: &Graph, features: &[DVector<f64>], weights: &[WeightVector]) -> Result<Frame> {
    check_dim("feature frame", g.n(), features.len())?;
    check_dim("weight vectors", g.n(), weights.len())?;
    let dim = features.first().map_or(0, |f| f.len());
    weights
        .iter()
        .enumerate()
        .map(|(i, wv)| {
            if wv.node != i || wv.neighbors != g.hood(i) {
                return Err(Error::InvalidArgument(format!(
                    "weight vector {i} does not cover the inclusive neighbourhood of node {i}"
                )));
            }
            let mut acc = DVector::zeros(dim);
            for (&j, &w) in wv.neighbors.iter().zip(&wv.weights) {
                check_dim("history feature", dim, features[j].len())?;
                acc.axpy(w, &features[j], 1.0);
            }
            Ok(acc)
        })
        .collect()
}
