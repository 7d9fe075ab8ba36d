//! Explicit finite-dimensional feature maps, the fixed action projection and
//! the linear feature-to-observation decoder.
//!
//! Observation and history share one [`FeatureMap`], so predicted observation
//! features can be fed back as the next history features during rollouts.
//!
//! With `augment` set, a node's map input is the concatenation of its own
//! observation and the mean observation of its non-self neighbours (a zero
//! vector when it has none); the raw observation alone otherwise.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::Graph;
use crate::{linalg, rng, Frame};

/// Serializable description of a feature map. Random Fourier frequencies are
/// re-derived from the seed and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// `ψ(x) = x`.
    Identity { input_dim: usize, augment: bool },
    /// `ψ(x) = sqrt(2/d)·cos(Wx + b)`, approximating `exp(−‖x−y‖²/(2γ²))`.
    RandomFourier {
        input_dim: usize,
        dim: usize,
        bandwidth: f64,
        seed: u64,
        augment: bool,
    },
    /// All monomials up to `degree`, constant first, graded lexicographic.
    Polynomial {
        input_dim: usize,
        degree: usize,
        augment: bool,
    },
}

#[derive(Debug, Clone)]
enum Kernel {
    Identity,
    Fourier { freq: DMatrix<f64>, phase: DVector<f64> },
    Polynomial { degree: usize },
}

#[derive(Debug, Clone)]
pub struct FeatureMap {
    spec: FeatureSpec,
    kernel: Kernel,
    feature_dim: usize,
}

impl PartialEq for FeatureMap {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl FeatureMap {
    pub fn identity(input_dim: usize, augment: bool) -> Self {
        Self::from_spec(FeatureSpec::Identity { input_dim, augment }).expect("identity map is always valid")
    }

    /// Random Fourier features for the Gaussian kernel of bandwidth `gamma`:
    /// frequency rows are i.i.d. `N(0, γ⁻² I)`, phases uniform on `[0, 2π)`.
    pub fn sample_rff(input_dim: usize, dim: usize, gamma: f64, seed: u64, augment: bool) -> Result<Self> {
        Self::from_spec(FeatureSpec::RandomFourier {
            input_dim,
            dim,
            bandwidth: gamma,
            seed,
            augment,
        })
    }

    pub fn polynomial(input_dim: usize, degree: usize, augment: bool) -> Result<Self> {
        Self::from_spec(FeatureSpec::Polynomial {
            input_dim,
            degree,
            augment,
        })
    }

    pub fn from_spec(spec: FeatureSpec) -> Result<Self> {
        let (input_dim, augment) = spec.input();
        if input_dim == 0 {
            return Err(Error::InvalidArgument("feature map input dimension must be positive".into()));
        }
        let raw = if augment { 2 * input_dim } else { input_dim };
        let (kernel, feature_dim) = match &spec {
            FeatureSpec::Identity { .. } => (Kernel::Identity, raw),
            FeatureSpec::RandomFourier {
                dim,
                bandwidth,
                seed,
                ..
            } => {
                if *dim == 0 {
                    return Err(Error::InvalidArgument("feature dimension must be positive".into()));
                }
                if !(bandwidth.is_finite() && *bandwidth > 0.0) {
                    return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
                }
                let mut rng = rng::stream(*seed, "rff", 0);
                let freq = DMatrix::from_fn(*dim, raw, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / bandwidth
                });
                let uniform = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
                let phase = DVector::from_fn(*dim, |_, _| uniform.sample(&mut rng));
                (Kernel::Fourier { freq, phase }, *dim)
            }
            FeatureSpec::Polynomial { degree, .. } => {
                let dim = match degree {
                    1 => 1 + raw,
                    2 => 1 + raw + raw * (raw + 1) / 2,
                    d => return Err(Error::UnsupportedDegree(*d)),
                };
                (Kernel::Polynomial { degree: *degree }, dim)
            }
        };
        Ok(FeatureMap {
            spec,
            kernel,
            feature_dim,
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Per-node observation dimension the map consumes.
    pub fn observation_dim(&self) -> usize {
        self.spec.input().0
    }

    pub fn augmented(&self) -> bool {
        self.spec.input().1
    }

    /// Length of the vector handed to [`FeatureMap::apply`].
    pub fn map_input_dim(&self) -> usize {
        if self.augmented() {
            2 * self.observation_dim()
        } else {
            self.observation_dim()
        }
    }

    /// Apply the map to an already assembled input vector.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("feature map input", self.map_input_dim(), x.len())?;
        Ok(match &self.kernel {
            Kernel::Identity => x.clone(),
            Kernel::Fourier { freq, phase } => {
                let scale = (2.0 / self.feature_dim as f64).sqrt();
                (freq * x + phase).map(|v| scale * v.cos())
            }
            Kernel::Polynomial { degree } => {
                let mut out = Vec::with_capacity(self.feature_dim);
                out.push(1.0);
                out.extend(x.iter().copied());
                if *degree == 2 {
                    for a in 0..x.len() {
                        for b in a..x.len() {
                            out.push(x[a] * x[b]);
                        }
                    }
                }
                DVector::from_vec(out)
            }
        })
    }

    /// Map input for node `i`: its observation, plus the neighbour mean when
    /// augmenting.
    pub fn node_input(&self, g: &Graph, obs: &[DVector<f64>], i: usize) -> Result<DVector<f64>> {
        check_dim("observation frame", g.n(), obs.len())?;
        let hood = g.inclusive_neighborhood(i)?;
        let dim = self.observation_dim();
        check_dim("node observation", dim, obs[i].len())?;
        if !self.augmented() {
            return Ok(obs[i].clone());
        }
        let mut mean = DVector::zeros(dim);
        let mut count = 0usize;
        for &j in hood.iter().filter(|&&j| j != i) {
            check_dim("node observation", dim, obs[j].len())?;
            mean += &obs[j];
            count += 1;
        }
        if count > 0 {
            mean /= count as f64;
        }
        let mut x = DVector::zeros(2 * dim);
        x.rows_mut(0, dim).copy_from(&obs[i]);
        x.rows_mut(dim, dim).copy_from(&mean);
        Ok(x)
    }

    pub fn encode_node(&self, g: &Graph, obs: &[DVector<f64>], i: usize) -> Result<DVector<f64>> {
        self.apply(&self.node_input(g, obs, i)?)
    }

    pub fn encode_frame(&self, g: &Graph, obs: &[DVector<f64>]) -> Result<Frame> {
        (0..g.n()).map(|i| self.encode_node(g, obs, i)).collect()
    }
}

impl FeatureSpec {
    fn input(&self) -> (usize, bool) {
        match *self {
            FeatureSpec::Identity { input_dim, augment }
            | FeatureSpec::RandomFourier {
                input_dim, augment, ..
            }
            | FeatureSpec::Polynomial {
                input_dim, augment, ..
            } => (input_dim, augment),
        }
    }
}

/// Median pairwise Euclidean distance over at most `max_samples` vectors
/// drawn without replacement with a seeded stream.
pub fn median_heuristic(samples: &[DVector<f64>], max_samples: usize, seed: u64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("median heuristic needs at least two samples".into()));
    }
    let chosen: Vec<&DVector<f64>> = if samples.len() > max_samples {
        let mut rng = rng::stream(seed, "median-heuristic", 0);
        let mut idx = sample(&mut rng, samples.len(), max_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| &samples[k]).collect()
    } else {
        samples.iter().collect()
    };
    let mut d = Vec::with_capacity(chosen.len() * (chosen.len() - 1) / 2);
    for a in 0..chosen.len() {
        for b in a + 1..chosen.len() {
            d.push((chosen[a] - chosen[b]).norm());
        }
    }
    d.sort_by(|x, y| x.total_cmp(y));
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::InvalidArgument("all sampled inputs coincide; median distance is zero".into()))
    }
}

/// Fixed linear action embedding `ψᵃ = P a` with orthonormal columns, so
/// `Pᵀ` recovers the action exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProjectionSpec", into = "ProjectionSpec")]
pub struct ActionProjection {
    spec: ProjectionSpec,
    matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub action_dim: usize,
    pub feature_dim: usize,
    /// `None` means identity (requires `feature_dim == action_dim`).
    pub seed: Option<u64>,
}

impl TryFrom<ProjectionSpec> for ActionProjection {
    type Error = Error;

    fn try_from(spec: ProjectionSpec) -> Result<Self> {
        match spec.seed {
            None => {
                check_dim("identity action projection", spec.action_dim, spec.feature_dim)?;
                Ok(Self::identity(spec.action_dim))
            }
            Some(seed) => Self::random(spec.action_dim, spec.feature_dim, seed),
        }
    }
}

impl From<ActionProjection> for ProjectionSpec {
    fn from(p: ActionProjection) -> Self {
        p.spec
    }
}

impl ActionProjection {
    pub fn identity(action_dim: usize) -> Self {
        ActionProjection {
            spec: ProjectionSpec {
                action_dim,
                feature_dim: action_dim,
                seed: None,
            },
            matrix: DMatrix::identity(action_dim, action_dim),
        }
    }

    /// Orthonormal columns from the QR factorisation of a seeded Gaussian
    /// `feature_dim × action_dim` matrix.
    pub fn random(action_dim: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if feature_dim < action_dim || action_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "action feature dimension {feature_dim} must be at least the action dimension {action_dim} > 0"
            )));
        }
        let mut rng = rng::stream(seed, "action-projection", 0);
        let g = DMatrix::from_fn(feature_dim, action_dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let q = g.qr().q();
        Ok(ActionProjection {
            spec: ProjectionSpec {
                action_dim,
                feature_dim,
                seed: Some(seed),
            },
            matrix: q.columns(0, action_dim).into_owned(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn encode(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("action", self.action_dim(), a.len())?;
        Ok(&self.matrix * a)
    }

    pub fn decode(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("action feature", self.feature_dim(), psi.len())?;
        Ok(self.matrix.tr_mul(psi))
    }

    pub fn encode_frame(&self, actions: &[DVector<f64>]) -> Result<Frame> {
        actions.iter().map(|a| self.encode(a)).collect()
    }

    pub fn decode_frame(&self, features: &[DVector<f64>]) -> Result<Frame> {
        features.iter().map(|f| self.decode(f)).collect()
    }
}

/// Linear decoder `o ≈ D ψ` fitted by ridge regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub matrix: DMatrix<f64>,
    pub ridge: f64,
}

impl Decoder {
    /// Solve `D (Σ ψψᵀ + ρI) = Σ o ψᵀ`.
    pub fn fit(features: &[DVector<f64>], targets: &[DVector<f64>], ridge: f64) -> Result<Self> {
        let (gram, cross) = decoder_moments(features, targets)?;
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("decoder ridge must be >= 0, got {ridge}")));
        }
        let matrix = linalg::ridge(&cross, &gram, ridge)?;
        Ok(Decoder { matrix, ridge })
    }

    pub fn feature_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn observation_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn decode(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("decoder input", self.feature_dim(), psi.len())?;
        Ok(&self.matrix * psi)
    }

    pub fn decode_frame(&self, features: &[DVector<f64>]) -> Result<Frame> {
        features.iter().map(|f| self.decode(f)).collect()
    }

    /// `‖D(Σψψᵀ+ρI) − Σoψᵀ‖_F / ‖Σoψᵀ‖_F` on the given samples.
    pub fn normal_equation_residual(&self, features: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64> {
        let (gram, cross) = decoder_moments(features, targets)?;
        Ok(linalg::ridge_residual(&self.matrix, &cross, &gram, self.ridge))
    }
}

fn decoder_moments(features: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("decoder needs at least one sample".into()));
    }
    check_dim("decoder targets", features.len(), targets.len())?;
    let d = features[0].len();
    let o = targets[0].len();
    let mut psi = DMatrix::zeros(d, features.len());
    let mut obs = DMatrix::zeros(o, targets.len());
    for (k, (f, t)) in features.iter().zip(targets).enumerate() {
        check_dim("decoder feature", d, f.len())?;
        check_dim("decoder target", o, t.len())?;
        psi.set_column(k, f);
        obs.set_column(k, t);
    }
    Ok((&psi * psi.transpose(), &obs * psi.transpose()))
}

/// Gaussian kernel `exp(−‖x−y‖²/(2γ²))`.
pub fn gaussian_kernel(x: &DVector<f64>, y: &DVector<f64>, gamma: f64) -> f64 {
    (-(x - y).norm_squared() / (2.0 * gamma * gamma)).exp()
}

/// Uniform random vector in `[-scale, scale]^dim`; used by tests and the harness.
pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-scale..=scale))
}
