//! Conditional embedding operators in four structural forms, estimated in
//! closed form by Tikhonov-regularised least squares.
//!
//! | Form | history term for receiver `i` | action term |
//! |------|-------------------------------|-------------|
//! | `Tensor` | `Σ_j C_{ij} vec(ψʰⱼ ⊗ ψᵃⱼ)` | (entangled) |
//! | `Dense` | `Σ_j C_{ij} ψʰⱼ` | `Σ_j K_{ij} ψᵃⱼ` |
//! | `Hom` | `Σ_j C_j ψʰⱼ` (one operator per source) | `Σ_j K_{ij} ψᵃⱼ` |
//! | `HomMean` | `C (Σ_j αⁱʲ ψʰⱼ)` (one shared operator) | `Σ_j K_{ij} ψᵃⱼ` |
//!
//! All sums run over the inclusive neighbourhood `ℰ(i)` in ascending order;
//! blocks for `j ∉ ℰ(i)` are never stored and read back as exact zeros.

mod eval;
mod fit;
mod io;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::features::{ActionProjection, Decoder, FeatureMap};
use crate::graph::Graph;
use crate::mean_field::{aggregate_history, all_weights, GibbsPotential, WeightVector};
use crate::Frame;

pub use eval::{prediction_nrmse, NrmseCurve, StepError};
pub use fit::{accumulate_moments, fit, fit_features, BlockResidual, FitReport, Moments, ReceiverMoments};

/// Largest `d · d_a` accepted by the tensor form.
pub const TENSOR_DIM_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Tensor,
    Dense,
    Hom,
    HomMean,
}

impl Form {
    pub const ALL: [Form; 4] = [Form::Tensor, Form::Dense, Form::Hom, Form::HomMean];

    pub fn name(self) -> &'static str {
        match self {
            Form::Tensor => "tensor",
            Form::Dense => "dense",
            Form::Hom => "hom",
            Form::HomMean => "hom_mean",
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tensor" => Ok(Form::Tensor),
            "dense" => Ok(Form::Dense),
            "hom" => Ok(Form::Hom),
            "hom_mean" | "hom+mean" | "hommean" | "hom-mean" => Ok(Form::HomMean),
            other => Err(Error::InvalidArgument(format!("unknown embedding form '{other}'"))),
        }
    }
}

/// How the regressors of one receiver are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Minimise the forward loss jointly over all blocks of a receiver
    /// (and over the shared operator for `HomMean`).
    #[default]
    Joint,
    /// Regress each block on its own operand alone:
    /// `C_{O|X} = Ĉ_{OX}(Ĉ_{XX} + λI)⁻¹`. Consistent only when operands of
    /// different blocks are uncorrelated.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    Fixed(f64),
    /// Multiple of the mean diagonal of the regressor covariance.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub form: Form,
    #[serde(default)]
    pub ridge: Ridge,
    #[serde(default)]
    pub potential: Option<GibbsPotential>,
    #[serde(default)]
    pub estimator: Estimator,
}

impl FitConfig {
    pub fn new(form: Form) -> Self {
        FitConfig {
            form,
            ridge: Ridge::default(),
            potential: None,
            estimator: Estimator::Joint,
        }
    }

    pub fn with_ridge(mut self, ridge: Ridge) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn with_potential(mut self, potential: GibbsPotential) -> Self {
        self.potential = Some(potential);
        self
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self.ridge {
            Ridge::Fixed(l) | Ridge::Relative(l) if !(l.is_finite() && l > 0.0) => {
                return Err(Error::InvalidArgument(format!("ridge strength must be positive, got {l}")))
            }
            _ => {}
        }
        if self.form == Form::HomMean {
            self.potential
                .ok_or_else(|| Error::InvalidArgument("hom_mean needs a Gibbs potential".into()))?
                .validate()?;
        }
        Ok(())
    }
}

/// Feature-space view of one trajectory: `frames[k]` is the history of
/// transition `k` and `frames[k + 1]` its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Vec<Frame>,
    pub actions: Vec<Frame>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureData {
    pub graph: Graph,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub sequences: Vec<FeatureSequence>,
}

impl FeatureData {
    pub fn new(graph: Graph, feature_dim: usize, action_dim: usize, sequences: Vec<FeatureSequence>) -> Result<Self> {
        let n = graph.n();
        for s in &sequences {
            if s.frames.len() != s.actions.len() + 1 {
                return Err(Error::Format("feature sequence needs one more frame than actions".into()));
            }
            for f in &s.frames {
                check_dim("feature frame", n, f.len())?;
                for v in f {
                    check_dim("feature vector", feature_dim, v.len())?;
                }
            }
            for f in &s.actions {
                check_dim("action frame", n, f.len())?;
                for v in f {
                    check_dim("action feature", action_dim, v.len())?;
                }
            }
        }
        Ok(FeatureData {
            graph,
            feature_dim,
            action_dim,
            sequences,
        })
    }

    pub fn encode(ds: &Dataset, map: &FeatureMap, proj: &ActionProjection) -> Result<Self> {
        check_dim("feature map input", ds.obs_dim, map.observation_dim())?;
        check_dim("action projection input", ds.action_dim, proj.action_dim())?;
        let sequences = ds
            .trajectories
            .par_iter()
            .map(|t| {
                Ok(FeatureSequence {
                    frames: t
                        .observations
                        .iter()
                        .map(|o| map.encode_frame(&ds.graph, o))
                        .collect::<Result<_>>()?,
                    actions: t
                        .actions
                        .iter()
                        .map(|a| proj.encode_frame(a))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureData {
            graph: ds.graph.clone(),
            feature_dim: map.feature_dim(),
            action_dim: proj.feature_dim(),
            sequences,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.sequences.iter().map(FeatureSequence::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum HistoryBlocks {
    /// Dense (`d × d`) or Tensor (`d × d·d_a`), indexed `[receiver][slot]`.
    PerPair(Vec<Vec<DMatrix<f64>>>),
    /// Hom: one `d × d` operator per source node.
    PerSource(Vec<DMatrix<f64>>),
    /// HomMean: one shared `d × d` operator.
    Shared(DMatrix<f64>),
}

/// A fitted embedding. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    form: Form,
    graph: Graph,
    feature_dim: usize,
    action_dim: usize,
    lambda: f64,
    potential: Option<GibbsPotential>,
    history: HistoryBlocks,
    /// `[receiver][slot]`, `d × d_a`; empty for the tensor form.
    action: Vec<Vec<DMatrix<f64>>>,
}

impl EmbeddingModel {
    pub fn form(&self) -> Form {
        self.form
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn potential(&self) -> Option<GibbsPotential> {
        self.potential
    }

    /// History operator from source `j` to receiver `i`; zero when
    /// `j ∉ ℰ(i)`. For `Tensor` this is the `d × d·d_a` pair operator. The
    /// `HomMean` form has no pairwise history block (see
    /// [`EmbeddingModel::shared_history_operator`]) and returns `None`.
    pub fn history_block(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        let slot = self.graph.slot(i, j);
        match &self.history {
            HistoryBlocks::PerPair(blocks) => Some(match slot {
                Some(s) => blocks[i][s].clone(),
                None => DMatrix::zeros(self.feature_dim, self.history_operand_dim()),
            }),
            HistoryBlocks::PerSource(blocks) => Some(match slot {
                Some(_) => blocks[j].clone(),
                None => DMatrix::zeros(self.feature_dim, self.feature_dim),
            }),
            HistoryBlocks::Shared(_) => None,
        }
    }

    pub fn shared_history_operator(&self) -> Option<&DMatrix<f64>> {
        match &self.history {
            HistoryBlocks::Shared(c) => Some(c),
            _ => None,
        }
    }

    /// Action operator from source `j` to receiver `i`; zero when
    /// `j ∉ ℰ(i)` and always `None` for the tensor form.
    pub fn action_block(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        if self.form == Form::Tensor {
            return None;
        }
        Some(match self.graph.slot(i, j) {
            Some(s) => self.action[i][s].clone(),
            None => DMatrix::zeros(self.feature_dim, self.action_dim),
        })
    }

    fn history_operand_dim(&self) -> usize {
        match self.form {
            Form::Tensor => self.feature_dim * self.action_dim,
            _ => self.feature_dim,
        }
    }

    /// Gibbs weights from the given history features (`HomMean` only).
    pub fn weights(&self, history: &[DVector<f64>]) -> Result<Option<Vec<WeightVector>>> {
        match (&self.history, &self.potential) {
            (HistoryBlocks::Shared(_), Some(p)) => Ok(Some(all_weights(&self.graph, history, p)?)),
            _ => Ok(None),
        }
    }

    fn check_inputs(&self, history: &[DVector<f64>], actions: &[DVector<f64>]) -> Result<()> {
        let n = self.graph.n();
        check_dim("history frame", n, history.len())?;
        check_dim("action frame", n, actions.len())?;
        for h in history {
            check_dim("history feature", self.feature_dim, h.len())?;
        }
        for a in actions {
            check_dim("action feature", self.action_dim, a.len())?;
        }
        Ok(())
    }

    /// One-step prediction of every node's observation features.
    pub fn predict(&self, history: &[DVector<f64>], actions: &[DVector<f64>]) -> Result<Frame> {
        let weights = self.weights(history)?;
        self.predict_with_weights(history, actions, weights.as_deref())
    }

    /// One-step prediction with externally supplied (frozen) Gibbs weights.
    /// `weights` is ignored by every form except `HomMean`, where `None`
    /// recomputes them from `history`.
    pub fn predict_with_weights(
        &self,
        history: &[DVector<f64>],
        actions: &[DVector<f64>],
        weights: Option<&[WeightVector]>,
    ) -> Result<Frame> {
        self.check_inputs(history, actions)?;
        let mut out = self.history_term(history, actions, weights)?;
        if self.form != Form::Tensor {
            for (i, o) in out.iter_mut().enumerate() {
                for (s, &j) in self.graph.hood(i).iter().enumerate() {
                    o.gemv(1.0, &self.action[i][s], &actions[j], 1.0);
                }
            }
        }
        Ok(out)
    }

    fn history_term(
        &self,
        history: &[DVector<f64>],
        actions: &[DVector<f64>],
        weights: Option<&[WeightVector]>,
    ) -> Result<Frame> {
        let n = self.graph.n();
        let d = self.feature_dim;
        Ok(match &self.history {
            HistoryBlocks::PerPair(blocks) if self.form == Form::Tensor => (0..n)
                .map(|i| {
                    let mut o = DVector::zeros(d);
                    for (s, &j) in self.graph.hood(i).iter().enumerate() {
                        o.gemv(1.0, &blocks[i][s], &tensor_operand(&history[j], &actions[j]), 1.0);
                    }
                    o
                })
                .collect(),
            HistoryBlocks::PerPair(blocks) => (0..n)
                .map(|i| {
                    let mut o = DVector::zeros(d);
                    for (s, &j) in self.graph.hood(i).iter().enumerate() {
                        o.gemv(1.0, &blocks[i][s], &history[j], 1.0);
                    }
                    o
                })
                .collect(),
            HistoryBlocks::PerSource(blocks) => (0..n)
                .map(|i| {
                    let mut o = DVector::zeros(d);
                    for &j in self.graph.hood(i) {
                        o.gemv(1.0, &blocks[j], &history[j], 1.0);
                    }
                    o
                })
                .collect(),
            HistoryBlocks::Shared(c) => {
                let owned;
                let w = match weights {
                    Some(w) => w,
                    None => {
                        owned = self.weights(history)?.expect("shared history implies a potential");
                        &owned
                    }
                };
                aggregate_history(&self.graph, history, w)?
                    .iter()
                    .map(|h| c * h)
                    .collect()
            }
        })
    }

    /// Adjoint of the one-step map for fixed weights: given per-node output
    /// covectors `y`, returns `(Fᵀy, Gᵀy)` where the prediction is
    /// `F h + G a`. The tensor form is bilinear and has no such split.
    pub fn adjoint_with_weights(&self, y: &[DVector<f64>], weights: Option<&[WeightVector]>) -> Result<(Frame, Frame)> {
        let n = self.graph.n();
        let d = self.feature_dim;
        check_dim("adjoint input", n, y.len())?;
        let mut hist = vec![DVector::zeros(d); n];
        let mut act = vec![DVector::zeros(self.action_dim); n];
        match &self.history {
            HistoryBlocks::PerPair(_) if self.form == Form::Tensor => return Err(Error::NotControllable("tensor")),
            HistoryBlocks::PerPair(blocks) => {
                for i in 0..n {
                    for (s, &j) in self.graph.hood(i).iter().enumerate() {
                        hist[j].gemv_tr(1.0, &blocks[i][s], &y[i], 1.0);
                    }
                }
            }
            HistoryBlocks::PerSource(blocks) => {
                for i in 0..n {
                    for &j in self.graph.hood(i) {
                        hist[j].gemv_tr(1.0, &blocks[j], &y[i], 1.0);
                    }
                }
            }
            HistoryBlocks::Shared(c) => {
                let w = weights.ok_or_else(|| Error::InvalidArgument("hom_mean adjoint needs frozen weights".into()))?;
                check_dim("weight vectors", n, w.len())?;
                for (i, wv) in w.iter().enumerate() {
                    let cy = c.tr_mul(&y[i]);
                    for (&j, &a) in wv.neighbors.iter().zip(&wv.weights) {
                        hist[j].axpy(a, &cy, 1.0);
                    }
                }
            }
        }
        for i in 0..n {
            for (s, &j) in self.graph.hood(i).iter().enumerate() {
                act[j].gemv_tr(1.0, &self.action[i][s], &y[i], 1.0);
            }
        }
        Ok((hist, act))
    }

    /// Autoregressive rollout: step 1 uses `initial` as history, every later
    /// step feeds back the previous predicted features. Returns one frame per
    /// action frame.
    pub fn rollout(&self, initial: &[DVector<f64>], actions: &[Frame]) -> Result<Vec<Frame>> {
        self.rollout_inner(initial, actions, None)
    }

    /// Rollout with Gibbs weights fixed per step (`weights[t]` is used for
    /// step `t + 1`).
    pub fn rollout_frozen(&self, initial: &[DVector<f64>], actions: &[Frame], weights: &[Vec<WeightVector>]) -> Result<Vec<Frame>> {
        check_dim("frozen weight schedule", actions.len(), weights.len())?;
        self.rollout_inner(initial, actions, Some(weights))
    }

    fn rollout_inner(&self, initial: &[DVector<f64>], actions: &[Frame], weights: Option<&[Vec<WeightVector>]>) -> Result<Vec<Frame>> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("rollout needs at least one step".into()));
        }
        let mut out: Vec<Frame> = Vec::with_capacity(actions.len());
        for (t, a) in actions.iter().enumerate() {
            let hist = if t == 0 { initial } else { &out[t - 1][..] };
            let w = weights.map(|w| &w[t][..]);
            let next = self.predict_with_weights(hist, a, w)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Rollout that decodes each predicted frame to observations and
    /// re-encodes it before the next step. Returns decoded observations.
    pub fn rollout_reencoded(
        &self,
        map: &FeatureMap,
        decoder: &Decoder,
        initial_obs: &[DVector<f64>],
        actions: &[Frame],
    ) -> Result<Vec<Frame>> {
        let mut hist = map.encode_frame(&self.graph, initial_obs)?;
        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            let pred = self.predict(&hist, a)?;
            let obs = decoder.decode_frame(&pred)?;
            hist = map.encode_frame(&self.graph, &obs)?;
            out.push(obs);
        }
        Ok(out)
    }
}

/// `vec(h ⊗ a)` with the action index running fastest.
pub fn tensor_operand(h: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
    let da = a.len();
    DVector::from_fn(h.len() * da, |k, _| h[k / da] * a[k % da])
}

#[cfg(test)]
mod tests;
