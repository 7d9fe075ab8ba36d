//! Finite-horizon quadratic control in feature space.
//!
//! With the one-step map frozen along a nominal trajectory, the `M`-step
//! predicted features are affine in the stacked action features,
//! `x = f + L z`, and the cost
//! `J(z) = Σ_t Σ_i ‖x_tⁱ − ψ_*ⁱ‖²_{Q1} + Σ_t Σ_i ‖z_tⁱ‖²_{Q2}`
//! is a ridge problem solved through its normal equations
//! `(LᵀQ̄1L + Q̄2) z = Lᵀ Q̄1 (ψ_* − f)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingModel, Form};
use crate::error::{check_dim, Error, Result};
use crate::features::{ActionProjection, FeatureMap};
use crate::linalg::{self, min_symmetric_eigenvalue};
use crate::mean_field::WeightVector;
use crate::rng::StreamRng;
use crate::sim::Environment;
use crate::Frame;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub horizon: usize,
    /// Target observation features, one per node.
    pub target: Frame,
    /// Per-node state cost on features (`d × d`, positive semi-definite).
    pub q1: DMatrix<f64>,
    /// Per-node action cost on action features (`d_a × d_a`, positive definite).
    pub q2: DMatrix<f64>,
    /// Re-plan from the true state after this many executed steps.
    pub feedback_step: Option<usize>,
    /// Nodes whose actions are decision variables; `None` means all.
    pub actuated: Option<Vec<bool>>,
}

impl ControlProblem {
    /// Defaults: `Q1 = I`, `Q2 = 1e-3·I`, open loop, every node actuated.
    pub fn new(horizon: usize, target: Frame, action_dim: usize) -> Self {
        let d = target.first().map_or(0, |t| t.len());
        ControlProblem {
            horizon,
            target,
            q1: DMatrix::identity(d, d),
            q2: DMatrix::identity(action_dim, action_dim) * 1e-3,
            feedback_step: None,
            actuated: None,
        }
    }

    pub fn with_feedback(mut self, step: usize) -> Self {
        self.feedback_step = Some(step);
        self
    }

    pub fn with_actuated(mut self, mask: Vec<bool>) -> Self {
        self.actuated = Some(mask);
        self
    }

    pub fn with_costs(mut self, q1: DMatrix<f64>, q2: DMatrix<f64>) -> Self {
        self.q1 = q1;
        self.q2 = q2;
        self
    }

    pub fn validate(&self, model: &EmbeddingModel) -> Result<()> {
        if model.form() == Form::Tensor {
            return Err(Error::NotControllable("tensor"));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let (n, d, da) = (model.graph().n(), model.feature_dim(), model.action_dim());
        check_dim("target frame", n, self.target.len())?;
        for t in &self.target {
            check_dim("target features", d, t.len())?;
        }
        check_dim("Q1 rows", d, self.q1.nrows())?;
        check_dim("Q1 columns", d, self.q1.ncols())?;
        check_dim("Q2 rows", da, self.q2.nrows())?;
        check_dim("Q2 columns", da, self.q2.ncols())?;
        let tol = 1e-12 * self.q1.amax().max(1.0);
        if min_symmetric_eigenvalue(&self.q1)? < -tol {
            return Err(Error::InvalidArgument("Q1 must be positive semi-definite".into()));
        }
        if min_symmetric_eigenvalue(&self.q2)? <= 0.0 {
            return Err(Error::InvalidArgument("Q2 must be positive definite".into()));
        }
        if let Some(f) = self.feedback_step {
            if f == 0 || f > self.horizon {
                return Err(Error::InvalidArgument(format!("feedback step {f} outside 1..={}", self.horizon)));
            }
        }
        if let Some(m) = &self.actuated {
            check_dim("actuation mask", n, m.len())?;
        }
        Ok(())
    }

    fn is_actuated(&self, i: usize) -> bool {
        self.actuated.as_ref().is_none_or(|m| m[i])
    }

    /// Feature-space cost of a trajectory `x_1..x_M` under actions `a_0..a_{M−1}`.
    pub fn cost(&self, features: &[Frame], actions: &[Frame]) -> f64 {
        let state: f64 = features
            .iter()
            .flat_map(|f| f.iter().zip(&self.target))
            .map(|(x, t)| {
                let e = x - t;
                e.dot(&(&self.q1 * &e))
            })
            .sum();
        let effort: f64 = actions.iter().flatten().map(|a| a.dot(&(&self.q2 * a))).sum();
        state + effort
    }
}

/// The `M`-step feature trajectory as an affine function of the actions,
/// with Gibbs weights (if any) frozen per step.
#[derive(Debug, Clone)]
pub struct AffineRollout<'a> {
    model: &'a EmbeddingModel,
    /// `weights[t]` is used for the transition into step `t + 1`.
    weights: Option<Vec<Vec<WeightVector>>>,
    /// Zero-action response `x_1..x_M` under the frozen weights.
    pub free: Vec<Frame>,
}

/// Freeze the weights along the zero-action nominal from `initial`.
pub fn linearize_rollout<'a>(model: &'a EmbeddingModel, initial: &Frame, horizon: usize) -> Result<AffineRollout<'a>> {
    let zero = vec![vec![DVector::zeros(model.action_dim()); model.graph().n()]; horizon];
    linearize_along(model, initial, &zero)
}

/// Freeze the weights along the rollout under `actions`.
pub fn linearize_along<'a>(model: &'a EmbeddingModel, initial: &Frame, actions: &[Frame]) -> Result<AffineRollout<'a>> {
    if model.form() == Form::Tensor {
        return Err(Error::NotControllable("tensor"));
    }
    if actions.is_empty() {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let weights = if model.form() == Form::HomMean {
        let mut w = Vec::with_capacity(actions.len());
        let mut x = initial.clone();
        for a in actions {
            let wt = model.weights(&x)?.expect("hom_mean has weights");
            x = model.predict_with_weights(&x, a, Some(&wt))?;
            w.push(wt);
        }
        Some(w)
    } else {
        None
    };
    let zero = vec![vec![DVector::zeros(model.action_dim()); model.graph().n()]; actions.len()];
    let free = match &weights {
        Some(w) => model.rollout_frozen(initial, &zero, w)?,
        None => model.rollout(initial, &zero)?,
    };
    Ok(AffineRollout { model, weights, free })
}

impl AffineRollout<'_> {
    pub fn horizon(&self) -> usize {
        self.free.len()
    }

    fn w(&self, t: usize) -> Option<&[WeightVector]> {
        self.weights.as_ref().map(|w| &w[t][..])
    }

    pub fn frozen_weights(&self) -> Option<&[Vec<WeightVector>]> {
        self.weights.as_deref()
    }

    /// Linear part `L z`: features `x_1..x_M` from a zero initial state.
    pub fn apply(&self, actions: &[Frame]) -> Result<Vec<Frame>> {
        check_dim("action sequence", self.horizon(), actions.len())?;
        let n = self.model.graph().n();
        let mut x = vec![DVector::zeros(self.model.feature_dim()); n];
        let mut out = Vec::with_capacity(actions.len());
        for (t, a) in actions.iter().enumerate() {
            x = self.model.predict_with_weights(&x, a, self.w(t))?;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// `f + L z`.
    pub fn apply_affine(&self, actions: &[Frame]) -> Result<Vec<Frame>> {
        let mut out = self.apply(actions)?;
        for (o, f) in out.iter_mut().zip(&self.free) {
            for (x, y) in o.iter_mut().zip(f) {
                *x += y;
            }
        }
        Ok(out)
    }

    /// `Lᵀ y` for covectors `y_1..y_M`, by a backward sweep.
    pub fn apply_adjoint(&self, y: &[Frame]) -> Result<Vec<Frame>> {
        let m = self.horizon();
        check_dim("adjoint sequence", m, y.len())?;
        let mut lambda = y[m - 1].clone();
        let mut out = vec![Vec::new(); m];
        for t in (0..m).rev() {
            let (hist, act) = self.model.adjoint_with_weights(&lambda, self.w(t))?;
            out[t] = act;
            if t > 0 {
                lambda = hist;
                for (l, yy) in lambda.iter_mut().zip(&y[t - 1]) {
                    *l += yy;
                }
            }
        }
        Ok(out)
    }

    /// Dense `L` with rows `(t, node, feature)` and columns `(t, node, action
    /// feature)`, both time-major.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let n = self.model.graph().n();
        let (d, da) = (self.model.feature_dim(), self.model.action_dim());
        let m = self.horizon();
        let mut l = DMatrix::zeros(m * n * d, m * n * da);
        let mut unit = vec![vec![DVector::zeros(da); n]; m];
        for t in 0..m {
            for i in 0..n {
                for q in 0..da {
                    unit[t][i][q] = 1.0;
                    let col = self.apply(&unit)?;
                    unit[t][i][q] = 0.0;
                    let c = (t * n + i) * da + q;
                    for (s, frame) in col.iter().enumerate() {
                        for (k, v) in frame.iter().enumerate() {
                            l.view_mut(((s * n + k) * d, c), (d, 1)).copy_from(v);
                        }
                    }
                }
            }
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Use a materialized Cholesky solve up to this many decision variables.
    pub max_dense_variables: usize,
    pub max_cg_iterations: usize,
    /// Stop when `‖∇J‖ ≤ tolerance · (1 + ‖∇J(0)‖)`.
    pub tolerance: f64,
    /// Re-freeze the weights along the planned trajectory and re-solve up to
    /// this many times (HomMean only).
    pub refinements: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_dense_variables: 1500,
            max_cg_iterations: 50_000,
            tolerance: 1e-8,
            refinements: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Dense,
    ConjugateGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// Optimal action features `z_0..z_{M−1}` (zero at non-actuated nodes).
    pub action_features: Vec<Frame>,
    /// Decoded actions.
    pub actions: Vec<Frame>,
    /// Predicted features `x_1..x_M` under the frozen map.
    pub predicted: Vec<Frame>,
    /// Predicted cost under the frozen map.
    pub cost: f64,
    pub gradient_norm: f64,
    pub initial_gradient_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

impl LqrSolution {
    pub fn relative_gradient(&self) -> f64 {
        self.gradient_norm / (1.0 + self.initial_gradient_norm)
    }
}

/// Packs the actuated entries of an action sequence into one vector.
struct Packing {
    slots: Vec<usize>,
    n: usize,
    da: usize,
    m: usize,
}

impl Packing {
    fn new(problem: &ControlProblem, n: usize, da: usize, m: usize) -> Self {
        let slots = (0..n).filter(|&i| problem.is_actuated(i)).collect();
        Packing { slots, n, da, m }
    }

    fn len(&self) -> usize {
        self.m * self.slots.len() * self.da
    }

    fn pack(&self, frames: &[Frame]) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        let mut k = 0;
        for f in frames {
            for &i in &self.slots {
                v.rows_mut(k, self.da).copy_from(&f[i]);
                k += self.da;
            }
        }
        v
    }

    fn unpack(&self, v: &DVector<f64>) -> Vec<Frame> {
        let mut out = vec![vec![DVector::zeros(self.da); self.n]; self.m];
        let mut k = 0;
        for f in out.iter_mut() {
            for &i in &self.slots {
                f[i].copy_from(&v.rows(k, self.da));
                k += self.da;
            }
        }
        out
    }
}

fn weighted(frames: &[Frame], q: &DMatrix<f64>) -> Vec<Frame> {
    frames.iter().map(|f| f.iter().map(|x| q * x).collect()).collect()
}

/// Minimise the feature-space cost from `initial` features.
pub fn solve_lqr(
    problem: &ControlProblem,
    model: &EmbeddingModel,
    initial: &Frame,
    proj: &ActionProjection,
    opts: &SolverOptions,
) -> Result<LqrSolution> {
    problem.validate(model)?;
    check_dim("initial frame", model.graph().n(), initial.len())?;
    check_dim("action projection", model.action_dim(), proj.feature_dim())?;
    let mut lin = linearize_rollout(model, initial, problem.horizon)?;
    let mut sol = solve_linearized(problem, &lin, proj, opts, None)?;
    if model.form() == Form::HomMean {
        for _ in 0..opts.refinements {
            lin = linearize_along(model, initial, &sol.action_features)?;
            let warm = sol.action_features.clone();
            sol = solve_linearized(problem, &lin, proj, opts, Some(&warm))?;
        }
    }
    Ok(sol)
}

/// Solve the ridge problem for a given affine rollout.
pub fn solve_linearized(
    problem: &ControlProblem,
    lin: &AffineRollout<'_>,
    proj: &ActionProjection,
    opts: &SolverOptions,
    warm_start: Option<&[Frame]>,
) -> Result<LqrSolution> {
    let model = lin.model;
    let (n, da) = (model.graph().n(), model.action_dim());
    let m = lin.horizon();
    let pack = Packing::new(problem, n, da, m);

    // b = Lᵀ Q1 (ψ_* − f)
    let residual0: Vec<Frame> = lin
        .free
        .iter()
        .map(|f| f.iter().zip(&problem.target).map(|(x, t)| t - x).collect())
        .collect();
    let rhs = pack.pack(&lin.apply_adjoint(&weighted(&residual0, &problem.q1))?);
    let q2_apply = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for k in (0..v.len()).step_by(da.max(1)) {
            out.rows_mut(k, da).copy_from(&(&problem.q2 * v.rows(k, da)));
        }
        out
    };
    // ∇J(z) = 2 (N z − b)
    let normal = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let x = lin.apply(&pack.unpack(v))?;
        Ok(pack.pack(&lin.apply_adjoint(&weighted(&x, &problem.q1))?) + q2_apply(v))
    };
    let initial_gradient_norm = 2.0 * rhs.norm();
    let tol = opts.tolerance * (1.0 + initial_gradient_norm) / 2.0;

    let (z, iterations, method) = if pack.len() <= opts.max_dense_variables {
        let l_full = lin.materialize()?;
        // keep actuated columns only
        let cols: Vec<usize> = (0..m)
            .flat_map(|t| pack.slots.iter().flat_map(move |&i| (0..da).map(move |q| (t * n + i) * da + q)))
            .collect();
        let l = l_full.select_columns(&cols);
        let d = model.feature_dim();
        let blocks = l.nrows() / d;
        let mut ql = l.clone();
        for b in 0..blocks {
            let rows = l.rows(b * d, d);
            ql.rows_mut(b * d, d).copy_from(&(&problem.q1 * rows));
        }
        let mut normal_mat = l.tr_mul(&ql);
        for k in (0..normal_mat.nrows()).step_by(da) {
            let mut blk = normal_mat.view_mut((k, k), (da, da));
            blk += &problem.q2;
        }
        let normal_mat = (&normal_mat + normal_mat.transpose()) * 0.5;
        let mut z = linalg::solve_spd(&normal_mat, &rhs)?;
        // one refinement step against the implicit operator
        let r = &rhs - normal(&z)?;
        z += linalg::solve_spd(&normal_mat, &r)?;
        (z, 1, SolveMethod::Dense)
    } else {
        let z0 = warm_start.map(|w| pack.pack(w)).unwrap_or_else(|| DVector::zeros(pack.len()));
        let (z, it) = conjugate_gradient(&normal, &rhs, z0, tol, opts.max_cg_iterations)?;
        (z, it, SolveMethod::ConjugateGradient)
    };
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("control solution".into()));
    }
    let gradient_norm = 2.0 * (normal(&z)? - &rhs).norm();
    let action_features = pack.unpack(&z);
    let predicted = lin.apply_affine(&action_features)?;
    let cost = problem.cost(&predicted, &action_features);
    let actions = action_features
        .iter()
        .map(|f| proj.decode_frame(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(LqrSolution {
        action_features,
        actions,
        predicted,
        cost,
        gradient_norm,
        initial_gradient_norm,
        iterations,
        method,
    })
}

fn conjugate_gradient(
    op: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    b: &DVector<f64>,
    mut x: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let mut r = b - op(&x)?;
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 0..max_iter {
        if rr.sqrt() <= tol {
            return Ok((x, it));
        }
        let ap = op(&p)?;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Singular("normal operator is not positive definite".into()));
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        // periodic recomputation limits drift of the recursive residual
        if (it + 1) % 200 == 0 {
            r = b - op(&x)?;
        }
        let rr_new = r.norm_squared();
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    if rr.sqrt() <= tol {
        Ok((x, max_iter))
    } else {
        Err(Error::Singular(format!(
            "conjugate gradient did not converge in {max_iter} iterations (residual {:.3e}, target {tol:.3e})",
            rr.sqrt()
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlResult {
    /// Executed observations `o_0..o_M`.
    pub observations: Vec<Frame>,
    /// Applied actions `a_0..a_{M−1}`.
    pub actions: Vec<Frame>,
    /// Applied action features.
    pub action_features: Vec<Frame>,
    /// Realised cost on the encoded executed observations.
    pub cost: f64,
    /// Number of plans solved (1 open loop, 2 with feedback).
    pub solves: usize,
}

/// Plan over the whole horizon, execute up to the feedback step, re-encode
/// the true observation, re-plan the remainder and execute it.
#[allow(clippy::too_many_arguments)]
pub fn receding_horizon_control(
    env: &Environment,
    model: &EmbeddingModel,
    map: &FeatureMap,
    proj: &ActionProjection,
    problem: &ControlProblem,
    initial_obs: &Frame,
    rng: &mut StreamRng,
    opts: &SolverOptions,
) -> Result<ControlResult> {
    problem.validate(model)?;
    let g = env.graph();
    if g != model.graph() {
        return Err(Error::InvalidArgument("environment and model graphs differ".into()));
    }
    let m = problem.horizon;
    let split = problem.feedback_step.unwrap_or(m);
    let mut observations = vec![initial_obs.clone()];
    let mut actions = Vec::with_capacity(m);
    let mut action_features = Vec::with_capacity(m);
    let mut solves = 0;
    let mut start = 0;
    for end in [split, m] {
        if end <= start {
            continue;
        }
        let sub = ControlProblem {
            horizon: m - start,
            feedback_step: None,
            ..problem.clone()
        };
        let x0 = map.encode_frame(g, observations.last().expect("nonempty"))?;
        let plan = solve_lqr(&sub, model, &x0, proj, opts)?;
        solves += 1;
        for k in 0..end - start {
            let mut u = plan.actions[k].clone();
            env.mask_actions(&mut u);
            let next = env.step(observations.last().expect("nonempty"), &u, rng)?;
            observations.push(next);
            actions.push(u);
            action_features.push(plan.action_features[k].clone());
        }
        start = end;
    }
    let encoded = observations[1..]
        .iter()
        .map(|o| map.encode_frame(g, o))
        .collect::<Result<Vec<_>>>()?;
    let cost = problem.cost(&encoded, &action_features);
    Ok(ControlResult {
        observations,
        actions,
        action_features,
        cost,
        solves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    pub cost: f64,
    pub error: f64,
}

/// `error = ‖o_M − o_*‖ / ‖o_*‖` over the stacked final observation.
pub fn control_error(final_obs: &[DVector<f64>], target: &[DVector<f64>]) -> Result<f64> {
    check_dim("target frame", final_obs.len(), target.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (o, t) in final_obs.iter().zip(target) {
        check_dim("target observation", o.len(), t.len())?;
        num += (o - t).norm_squared();
        den += t.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("control error needs a nonzero target".into()));
    }
    Ok((num / den).sqrt())
}

pub fn control_metrics(result: &ControlResult, target: &[DVector<f64>]) -> Result<ControlMetrics> {
    Ok(ControlMetrics {
        cost: result.cost,
        error: control_error(result.observations.last().expect("nonempty"), target)?,
    })
}

#[cfg(test)]
mod tests;
