//! Moment accumulation and the closed-form estimators.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tensor_operand, EmbeddingModel, Estimator, FeatureData, FitConfig, Form, HistoryBlocks, Ridge, TENSOR_DIM_LIMIT};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{ActionProjection, FeatureMap};
use crate::linalg;
use crate::mean_field::{aggregate_history, all_weights, GibbsPotential};
use crate::Frame;

/// Sample-averaged second moments for one receiver.
///
/// The regressor `x` is laid out per form:
/// Dense/Hom `[ψʰ_{j₁} … ψʰ_{j_k}, ψᵃ_{j₁} … ψᵃ_{j_k}]`,
/// HomMean `[h̄ⁱ, ψᵃ_{j₁} … ψᵃ_{j_k}]`,
/// Tensor `[vec(ψʰ_{j₁}⊗ψᵃ_{j₁}) … ]`, with `j₁ < … < j_k` the inclusive
/// neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverMoments {
    pub node: usize,
    pub count: usize,
    /// `Ĉ_{Ox} = (1/T) Σ ψᵒ xᵀ`
    pub cross: DMatrix<f64>,
    /// `Ĉ_{xx} = (1/T) Σ x xᵀ`
    pub gram: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub form: Form,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub receivers: Vec<ReceiverMoments>,
}

impl Moments {
    /// Offset and width of the history operand for neighbourhood slot `s`
    /// (`HomMean` has one aggregated operand at slot 0).
    fn history_range(&self, s: usize) -> (usize, usize) {
        let d = self.feature_dim;
        match self.form {
            Form::Tensor => (s * d * self.action_dim, d * self.action_dim),
            Form::HomMean => (0, d),
            Form::Dense | Form::Hom => (s * d, d),
        }
    }

    fn action_range(&self, k: usize, s: usize) -> (usize, usize) {
        let d = self.feature_dim;
        let da = self.action_dim;
        match self.form {
            Form::HomMean => (d + s * da, da),
            _ => (k * d + s * da, da),
        }
    }
}

fn regressor_dim(form: Form, k: usize, d: usize, da: usize) -> usize {
    match form {
        Form::Tensor => k * d * da,
        Form::HomMean => d + k * da,
        Form::Dense | Form::Hom => k * (d + da),
    }
}

/// Empirical covariances for every receiver, accumulated in ascending
/// (trajectory, step) order. `HomMean` needs `potential` to form the
/// aggregated history `h̄`.
pub fn accumulate_moments(data: &FeatureData, form: Form, potential: Option<&GibbsPotential>) -> Result<Moments> {
    let count = data.num_samples();
    if count == 0 {
        return Err(Error::InvalidArgument("dataset has no transitions".into()));
    }
    let d = data.feature_dim;
    let da = data.action_dim;
    if form == Form::Tensor && d * da > TENSOR_DIM_LIMIT {
        return Err(Error::TensorTooLarge(d * da, TENSOR_DIM_LIMIT));
    }
    let g = &data.graph;

    // h̄ for every (sequence, step), shared by all receivers.
    let aggregated: Option<Vec<Vec<Frame>>> = match form {
        Form::HomMean => {
            let p = potential.ok_or_else(|| Error::InvalidArgument("hom_mean needs a Gibbs potential".into()))?;
            Some(
                data.sequences
                    .par_iter()
                    .map(|s| {
                        s.frames[..s.len()]
                            .iter()
                            .map(|h| aggregate_history(g, h, &all_weights(g, h, p)?))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?,
            )
        }
        _ => None,
    };

    let receivers = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let hood = g.hood(i);
            let k = hood.len();
            let p = regressor_dim(form, k, d, da);
            let mut cross = DMatrix::zeros(d, p);
            let mut gram = DMatrix::zeros(p, p);
            for (si, seq) in data.sequences.iter().enumerate() {
                let len = seq.len();
                if len == 0 {
                    continue;
                }
                let mut x = DMatrix::zeros(p, len);
                let mut y = DMatrix::zeros(d, len);
                for t in 0..len {
                    let hist = &seq.frames[t];
                    let act = &seq.actions[t];
                    y.set_column(t, &seq.frames[t + 1][i]);
                    let mut col = x.column_mut(t);
                    match form {
                        Form::Dense | Form::Hom => {
                            for (s, &j) in hood.iter().enumerate() {
                                col.rows_mut(s * d, d).copy_from(&hist[j]);
                                col.rows_mut(k * d + s * da, da).copy_from(&act[j]);
                            }
                        }
                        Form::HomMean => {
                            let agg = &aggregated.as_ref().expect("computed above")[si][t][i];
                            col.rows_mut(0, d).copy_from(agg);
                            for (s, &j) in hood.iter().enumerate() {
                                col.rows_mut(d + s * da, da).copy_from(&act[j]);
                            }
                        }
                        Form::Tensor => {
                            for (s, &j) in hood.iter().enumerate() {
                                col.rows_mut(s * d * da, d * da)
                                    .copy_from(&tensor_operand(&hist[j], &act[j]));
                            }
                        }
                    }
                }
                cross.gemm(1.0, &y, &x.transpose(), 1.0);
                gram.gemm(1.0, &x, &x.transpose(), 1.0);
            }
            let scale = 1.0 / count as f64;
            ReceiverMoments {
                node: i,
                count,
                cross: cross * scale,
                gram: gram * scale,
            }
        })
        .collect::<Vec<_>>();

    for r in &receivers {
        if !r.cross.iter().chain(r.gram.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("moments of receiver {}", r.node)));
        }
    }
    Ok(Moments {
        form,
        feature_dim: d,
        action_dim: da,
        receivers,
    })
}

/// Normal-equation residual of one fitted block (or joint block group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub receiver: Option<usize>,
    pub label: String,
    pub relative_residual: f64,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub form: Form,
    pub estimator: Estimator,
    pub lambda: f64,
    pub samples: usize,
    pub blocks: Vec<BlockResidual>,
}

impl FitReport {
    pub fn max_residual(&self) -> f64 {
        self.blocks.iter().map(|b| b.relative_residual).fold(0.0, f64::max)
    }

    pub fn max_condition_number(&self) -> f64 {
        self.blocks.iter().map(|b| b.condition_number).fold(0.0, f64::max)
    }
}

/// Encode a dataset with the given maps and fit.
pub fn fit(ds: &Dataset, map: &FeatureMap, proj: &ActionProjection, cfg: &FitConfig) -> Result<(EmbeddingModel, FitReport)> {
    fit_features(&FeatureData::encode(ds, map, proj)?, cfg)
}

pub fn fit_features(data: &FeatureData, cfg: &FitConfig) -> Result<(EmbeddingModel, FitReport)> {
    cfg.validate()?;
    let moments = accumulate_moments(data, cfg.form, cfg.potential.as_ref())?;
    let lambda = match cfg.ridge {
        Ridge::Fixed(l) => l,
        Ridge::Relative(r) => {
            let md = moments
                .receivers
                .iter()
                .map(|m| linalg::mean_diagonal(&m.gram))
                .sum::<f64>()
                / moments.receivers.len() as f64;
            (r * md).max(1e-12)
        }
    };
    let g = &data.graph;
    let d = data.feature_dim;
    let da = data.action_dim;
    let mut blocks = Vec::new();

    let (history, action) = match cfg.form {
        Form::Dense | Form::Hom => {
            let per_receiver = fit_pairwise(&moments, lambda, cfg.estimator, &mut blocks)?;
            let (hist, act): (Vec<_>, Vec<_>) = per_receiver.into_iter().unzip();
            let history = if cfg.form == Form::Dense {
                HistoryBlocks::PerPair(hist)
            } else {
                // Per-source operator: average of the receivers' blocks for that source.
                let per_source = (0..g.n())
                    .map(|j| {
                        let mut acc = DMatrix::zeros(d, d);
                        let receivers = g.hood(j);
                        for &i in receivers {
                            let s = g.slot(i, j).expect("symmetric neighbourhoods");
                            acc += &hist[i][s];
                        }
                        acc / receivers.len() as f64
                    })
                    .collect();
                HistoryBlocks::PerSource(per_source)
            };
            (history, act)
        }
        Form::Tensor => {
            let per_receiver = fit_pairwise(&moments, lambda, cfg.estimator, &mut blocks)?;
            (HistoryBlocks::PerPair(per_receiver.into_iter().map(|(h, _)| h).collect()), Vec::new())
        }
        Form::HomMean => {
            let (shared, act) = fit_shared(&moments, lambda, cfg.estimator, &mut blocks)?;
            (HistoryBlocks::Shared(shared), act)
        }
    };

    let model = EmbeddingModel {
        form: cfg.form,
        graph: g.clone(),
        feature_dim: d,
        action_dim: da,
        lambda,
        potential: if cfg.form == Form::HomMean { cfg.potential } else { None },
        history,
        action,
    };
    let report = FitReport {
        form: cfg.form,
        estimator: cfg.estimator,
        lambda,
        samples: data.num_samples(),
        blocks,
    };
    Ok((model, report))
}

type PairBlocks = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

fn sub_gram(m: &ReceiverMoments, (o, w): (usize, usize)) -> DMatrix<f64> {
    m.gram.view((o, o), (w, w)).into_owned()
}

fn sub_cross(m: &ReceiverMoments, (o, w): (usize, usize)) -> DMatrix<f64> {
    m.cross.columns(o, w).into_owned()
}

fn solve_block(
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    lambda: f64,
    receiver: usize,
    label: String,
    out: &mut Vec<BlockResidual>,
) -> Result<DMatrix<f64>> {
    let c = linalg::ridge(cross, gram, lambda)?;
    let mut reg = gram.clone();
    for k in 0..reg.nrows() {
        reg[(k, k)] += lambda;
    }
    out.push(BlockResidual {
        receiver: Some(receiver),
        label,
        relative_residual: linalg::ridge_residual(&c, cross, gram, lambda),
        condition_number: linalg::spd_condition_number(&reg),
    });
    Ok(c)
}

/// Dense/Hom/Tensor receivers: returns `[receiver] → (history blocks, action blocks)`.
fn fit_pairwise(m: &Moments, lambda: f64, estimator: Estimator, report: &mut Vec<BlockResidual>) -> Result<Vec<PairBlocks>> {
    let results = m
        .receivers
        .par_iter()
        .map(|r| {
            let mut local = Vec::new();
            let k = if m.form == Form::Tensor {
                r.gram.nrows() / (m.feature_dim * m.action_dim).max(1)
            } else {
                r.gram.nrows() / (m.feature_dim + m.action_dim)
            };
            let with_actions = m.form != Form::Tensor;
            let blocks = match estimator {
                Estimator::Joint => {
                    let c = solve_block(&r.cross, &r.gram, lambda, r.node, "joint".into(), &mut local)?;
                    let hist = (0..k)
                        .map(|s| {
                            let (o, w) = m.history_range(s);
                            c.columns(o, w).into_owned()
                        })
                        .collect();
                    let act = if with_actions {
                        (0..k)
                            .map(|s| {
                                let (o, w) = m.action_range(k, s);
                                c.columns(o, w).into_owned()
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    (hist, act)
                }
                Estimator::Marginal => {
                    let mut hist = Vec::with_capacity(k);
                    let mut act = Vec::new();
                    for s in 0..k {
                        let hr = m.history_range(s);
                        hist.push(solve_block(&sub_cross(r, hr), &sub_gram(r, hr), lambda, r.node, format!("history[{s}]"), &mut local)?);
                        if with_actions {
                            let ar = m.action_range(k, s);
                            act.push(solve_block(&sub_cross(r, ar), &sub_gram(r, ar), lambda, r.node, format!("action[{s}]"), &mut local)?);
                        }
                    }
                    (hist, act)
                }
            };
            Ok((blocks, local))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .into_iter()
        .map(|(b, local)| {
            report.extend(local);
            b
        })
        .collect())
}

/// HomMean: shared history operator plus per-receiver action blocks.
fn fit_shared(
    m: &Moments,
    lambda: f64,
    estimator: Estimator,
    report: &mut Vec<BlockResidual>,
) -> Result<(DMatrix<f64>, Vec<Vec<DMatrix<f64>>>)> {
    let d = m.feature_dim;
    let n = m.receivers.len() as f64;
    let hr = (0, d);
    let mut pooled_gram = DMatrix::zeros(d, d);
    let mut pooled_cross = DMatrix::zeros(d, d);
    for r in &m.receivers {
        pooled_gram += sub_gram(r, hr);
        pooled_cross += sub_cross(r, hr);
    }
    let slots = |r: &super::fit::ReceiverMoments| (r.gram.nrows() - d) / m.action_dim.max(1);

    match estimator {
        Estimator::Marginal => {
            let shared = linalg::ridge(&pooled_cross, &pooled_gram, n * lambda)?;
            let mut reg = pooled_gram.clone();
            for k in 0..d {
                reg[(k, k)] += n * lambda;
            }
            report.push(BlockResidual {
                receiver: None,
                label: "shared history".into(),
                relative_residual: linalg::ridge_residual(&shared, &pooled_cross, &pooled_gram, n * lambda),
                condition_number: linalg::spd_condition_number(&reg),
            });
            let mut actions = Vec::with_capacity(m.receivers.len());
            for r in &m.receivers {
                let k = slots(r);
                let mut blocks = Vec::with_capacity(k);
                for s in 0..k {
                    let ar = m.action_range(k, s);
                    blocks.push(solve_block(&sub_cross(r, ar), &sub_gram(r, ar), lambda, r.node, format!("action[{s}]"), report)?);
                }
                actions.push(blocks);
            }
            Ok((shared, actions))
        }
        Estimator::Joint => {
            // Profile out each receiver's action blocks (Schur complement on
            // the action part), solve for the shared operator, then recover
            // the action blocks from the history residual.
            struct Part {
                s_reg: DMatrix<f64>,
                c_oz: DMatrix<f64>,
                c_hz: DMatrix<f64>,
            }
            let parts = m
                .receivers
                .par_iter()
                .map(|r| {
                    let p = r.gram.nrows();
                    let z = p - d;
                    let mut s_reg = r.gram.view((d, d), (z, z)).into_owned();
                    for k in 0..z {
                        s_reg[(k, k)] += lambda;
                    }
                    let c_hz = r.gram.view((0, d), (d, z)).into_owned();
                    let c_oz = r.cross.columns(d, z).into_owned();
                    let c_hh = r.gram.view((0, 0), (d, d)).into_owned();
                    let c_oh = r.cross.columns(0, d).into_owned();
                    // Ĉ_hz S⁻¹ and Ĉ_oz S⁻¹
                    let hz_s = linalg::solve_spd_right(&c_hz, &s_reg)?;
                    let oz_s = linalg::solve_spd_right(&c_oz, &s_reg)?;
                    let schur_gram = &c_hh - &hz_s * c_hz.transpose();
                    let schur_cross = &c_oh - &oz_s * c_hz.transpose();
                    Ok((Part { s_reg, c_oz, c_hz }, schur_gram, schur_cross))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut gram = DMatrix::zeros(d, d);
            let mut cross = DMatrix::zeros(d, d);
            for (_, g, c) in &parts {
                gram += g;
                cross += c;
            }
            // Symmetrise against round-off before the Cholesky solve.
            let gram = (&gram + gram.transpose()) * 0.5;
            let shared = linalg::ridge(&cross, &gram, n * lambda)?;

            let solved = parts
                .par_iter()
                .zip(m.receivers.par_iter())
                .map(|((part, _, _), r)| {
                    let rhs = &part.c_oz - &shared * &part.c_hz;
                    let k_all = linalg::solve_spd_right(&rhs, &part.s_reg)?;
                    let res = (&k_all * &part.s_reg - &rhs).norm() / (part.c_oz.norm() + (&shared * &part.c_hz).norm() + f64::EPSILON);
                    let residual = BlockResidual {
                        receiver: Some(r.node),
                        label: "actions".into(),
                        relative_residual: res,
                        condition_number: linalg::spd_condition_number(&part.s_reg),
                    };
                    let k = slots(r);
                    let da = m.action_dim;
                    let blocks = (0..k).map(|s| k_all.columns(s * da, da).into_owned()).collect::<Vec<_>>();
                    Ok((blocks, residual))
                })
                .collect::<Result<Vec<_>>>()?;

            // Stationarity in the shared operator:
            // C (Σ Ĉ_hh + NλI) = Σ (Ĉ_oh − K_i Ĉ_zh)
            let mut rhs = DMatrix::zeros(d, d);
            for (r, (blocks, _)) in m.receivers.iter().zip(&solved) {
                let z = r.gram.nrows() - d;
                let mut k_all = DMatrix::zeros(d, z);
                for (s, b) in blocks.iter().enumerate() {
                    k_all.columns_mut(s * m.action_dim, m.action_dim).copy_from(b);
                }
                let c_zh = r.gram.view((d, 0), (z, d));
                rhs += sub_cross(r, hr) - k_all * c_zh;
            }
            let mut reg = pooled_gram.clone();
            for k in 0..d {
                reg[(k, k)] += n * lambda;
            }
            report.push(BlockResidual {
                receiver: None,
                label: "shared history".into(),
                relative_residual: (&shared * &reg - &rhs).norm() / (rhs.norm() + f64::EPSILON),
                condition_number: linalg::spd_condition_number(&reg),
            });
            let mut actions = Vec::with_capacity(solved.len());
            for (blocks, residual) in solved {
                report.push(residual);
                actions.push(blocks);
            }
            Ok((shared, actions))
        }
    }
}

/// Column vector helper used by tests that build moments by hand.
#[allow(dead_code)]
pub(crate) fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}
