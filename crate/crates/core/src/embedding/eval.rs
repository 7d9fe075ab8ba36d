//! Multi-step prediction error.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingModel;
use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::features::{ActionProjection, Decoder, FeatureMap};
use crate::linalg::coordinate_std;
use crate::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub step: usize,
    /// Error pooled over every node and trajectory.
    pub pooled: f64,
    /// Mean and population std of the per-trajectory values.
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrmseCurve {
    pub steps: Vec<StepError>,
}

impl NrmseCurve {
    pub fn at(&self, step: usize) -> Option<&StepError> {
        self.steps.get(step.checked_sub(1)?)
    }
}

/// Rolls the model out from each test trajectory's initial observation under
/// its recorded actions, decodes every predicted frame and scores it against
/// ground truth. Each coordinate's squared error is divided by the variance
/// of that coordinate over all ground-truth observations of the test set.
pub fn prediction_nrmse(
    model: &EmbeddingModel,
    map: &FeatureMap,
    proj: &ActionProjection,
    decoder: &Decoder,
    test: &Dataset,
    horizon: usize,
) -> Result<NrmseCurve> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if test.trajectories.is_empty() {
        return Err(Error::InvalidArgument("no test trajectories".into()));
    }
    if let Some(t) = test.trajectories.iter().find(|t| t.len() < horizon) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} exceeds trajectory length {}",
            t.len()
        )));
    }
    check_dim("decoder output", test.obs_dim, decoder.observation_dim())?;
    let std = coordinate_std(test.observation_vectors(), test.obs_dim);
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("ground truth has a zero-variance coordinate".into()));
    }
    let inv_var = std.map(|s| 1.0 / (s * s));

    // [trajectory][step] normalised squared error summed over nodes and coordinates
    let per_traj = test
        .trajectories
        .par_iter()
        .map(|t| {
            let init = map.encode_frame(&test.graph, &t.observations[0])?;
            let actions = t.actions[..horizon]
                .iter()
                .map(|a| proj.encode_frame(a))
                .collect::<Result<Vec<Frame>>>()?;
            let pred = model.rollout(&init, &actions)?;
            pred.iter()
                .enumerate()
                .map(|(k, frame)| {
                    let decoded = decoder.decode_frame(frame)?;
                    Ok(decoded
                        .iter()
                        .zip(&t.observations[k + 1])
                        .map(|(p, o)| weighted_sq(&(p - o), &inv_var))
                        .sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let per_sample = (test.graph.n() * test.obs_dim) as f64;
    let steps = (0..horizon)
        .map(|k| {
            let values: Vec<f64> = per_traj.iter().map(|e| (e[k] / per_sample).sqrt()).collect();
            let pooled = (per_traj.iter().map(|e| e[k]).sum::<f64>() / (per_sample * per_traj.len() as f64)).sqrt();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            StepError {
                step: k + 1,
                pooled,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(NrmseCurve { steps })
}

fn weighted_sq(e: &DVector<f64>, w: &DVector<f64>) -> f64 {
    e.iter().zip(w.iter()).map(|(x, w)| x * x * w).sum()
}
