use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::dataset::Trajectory;
use crate::features::random_vector;
use crate::mean_field::gibbs_weights;
use crate::rng::seeded;

fn scalar_frame(v: &[f64]) -> Frame {
    v.iter().map(|&x| DVector::from_element(1, x)).collect()
}

/// One sequence from a frame-level transition function.
fn simulate(
    g: &Graph,
    x0: Frame,
    actions: Vec<Frame>,
    step: impl Fn(&Frame, &Frame) -> Frame,
) -> FeatureSequence {
    let mut frames = vec![x0];
    for a in &actions {
        let next = step(frames.last().unwrap(), a);
        frames.push(next);
    }
    let _ = g;
    FeatureSequence { frames, actions }
}

fn random_frame(rng: &mut impl Rng, n: usize, dim: usize) -> Frame {
    (0..n).map(|_| random_vector(rng, dim, 1.0)).collect()
}

/// Independent i.i.d. transitions (each sequence has one step).
fn iid_data(
    g: &Graph,
    d: usize,
    da: usize,
    samples: usize,
    seed: u64,
    step: impl Fn(&Frame, &Frame) -> Frame,
) -> FeatureData {
    let mut rng = seeded(seed);
    let sequences = (0..samples)
        .map(|_| {
            let h = random_frame(&mut rng, g.n(), d);
            let a = random_frame(&mut rng, g.n(), da);
            simulate(g, h, vec![a], &step)
        })
        .collect();
    FeatureData::new(g.clone(), d, da, sequences).unwrap()
}

fn tiny_ridge(form: Form) -> FitConfig {
    FitConfig::new(form).with_ridge(Ridge::Fixed(1e-10))
}

#[test]
fn zero_features_give_zero_moments() {
    let g = Graph::chain(3).unwrap();
    let z = vec![DVector::zeros(2); 3];
    let seq = FeatureSequence {
        frames: vec![z.clone(); 4],
        actions: vec![vec![DVector::zeros(1); 3]; 3],
    };
    let data = FeatureData::new(g, 2, 1, vec![seq]).unwrap();
    for form in [Form::Dense, Form::Tensor, Form::Hom] {
        let m = accumulate_moments(&data, form, None).unwrap();
        for r in &m.receivers {
            assert!(r.cross.iter().chain(r.gram.iter()).all(|&v| v == 0.0));
        }
    }
}

#[test]
fn single_sample_moments_are_outer_products() {
    let g = Graph::single_node();
    let seq = FeatureSequence {
        frames: vec![scalar_frame(&[3.0]), scalar_frame(&[2.0])],
        actions: vec![scalar_frame(&[0.0])],
    };
    let data = FeatureData::new(g, 1, 1, vec![seq.clone()]).unwrap();
    let m = accumulate_moments(&data, Form::Dense, None).unwrap();
    assert_eq!(m.receivers[0].cross[(0, 0)], 6.0);
    assert_eq!(m.receivers[0].gram[(0, 0)], 9.0);

    let doubled = FeatureData::new(Graph::single_node(), 1, 1, vec![seq.clone(), seq]).unwrap();
    let m2 = accumulate_moments(&doubled, Form::Dense, None).unwrap();
    assert_eq!(m.receivers, m2.receivers.iter().map(|r| ReceiverMoments { count: 1, ..r.clone() }).collect::<Vec<_>>());
}

#[test]
fn scalar_autoregression_is_recovered() {
    let g = Graph::single_node();
    let mut x = 1.0;
    let mut frames = vec![scalar_frame(&[x])];
    // persistently varying start so the single trajectory is informative
    for t in 0..100 {
        x = 0.9 * x + if t % 10 == 0 { 1.0 } else { 0.0 };
        let _ = t;
        frames.push(scalar_frame(&[x]));
    }
    // remove the kicks: refit on pairs generated exactly by 0.9
    let seqs = frames
        .windows(2)
        .map(|w| FeatureSequence {
            frames: vec![w[0].clone(), scalar_frame(&[0.9 * w[0][0][0]])],
            actions: vec![scalar_frame(&[0.0])],
        })
        .collect();
    let data = FeatureData::new(g, 1, 1, seqs).unwrap();
    let (model, report) = fit_features(&data, &tiny_ridge(Form::Dense)).unwrap();
    assert!((model.history_block(0, 0).unwrap()[(0, 0)] - 0.9).abs() < 1e-6);
    assert!(report.max_residual() < 1e-8);
}

#[test]
fn zero_observations_give_zero_blocks() {
    let g = Graph::chain(3).unwrap();
    let data = iid_data(&g, 2, 1, 20, 1, |h, _| vec![DVector::zeros(2); h.len()]);
    for form in [Form::Dense, Form::Hom, Form::Tensor] {
        let (model, _) = fit_features(&data, &FitConfig::new(form)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(model.history_block(i, j).unwrap().iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn single_node_forms_coincide() {
    let g = Graph::single_node();
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.7]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, -0.5]);
    let data = iid_data(&g, 2, 1, 50, 2, |h, u| vec![&a * &h[0] + &b * &u[0]]);
    let pot = GibbsPotential::Gaussian { sigma: 1.0 };
    let (dense, _) = fit_features(&data, &tiny_ridge(Form::Dense)).unwrap();
    let (hom, _) = fit_features(&data, &tiny_ridge(Form::Hom)).unwrap();
    let (hm, _) = fit_features(&data, &tiny_ridge(Form::HomMean).with_potential(pot)).unwrap();
    let hd = dense.history_block(0, 0).unwrap();
    assert!((&hd - hom.history_block(0, 0).unwrap()).norm() < 1e-12);
    assert!((&hd - hm.shared_history_operator().unwrap()).norm() < 1e-8);
    assert!((&hd - &a).norm() < 1e-6);
    assert!((dense.action_block(0, 0).unwrap() - hm.action_block(0, 0).unwrap()).norm() < 1e-8);
}

#[test]
fn hom_averages_receiver_solutions() {
    let g = Graph::chain(2).unwrap();
    let data = iid_data(&g, 1, 1, 200, 3, |h, _| scalar_frame(&[0.5 * h[0][0], 0.9 * h[0][0]]));
    let (hom, report) = fit_features(&data, &tiny_ridge(Form::Hom)).unwrap();
    assert!((hom.history_block(0, 0).unwrap()[(0, 0)] - 0.7).abs() < 1e-6);
    assert!((hom.history_block(1, 0).unwrap()[(0, 0)] - 0.7).abs() < 1e-6);
    assert!(hom.history_block(0, 1).unwrap()[(0, 0)].abs() < 1e-6);
    assert!(report.max_residual() < 1e-8);
}

#[test]
fn hom_mean_recovers_shared_operator() {
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
    let pot = GibbsPotential::Gaussian { sigma: 0.7 };
    let data = iid_data(&g, 2, 1, 300, 4, |h, _| {
        let w = all_weights(&g, h, &pot).unwrap();
        aggregate_history(&g, h, &w).unwrap().iter().map(|x| x * 0.8).collect()
    });
    let (model, report) = fit_features(&data, &tiny_ridge(Form::HomMean).with_potential(pot)).unwrap();
    let c = model.shared_history_operator().unwrap();
    assert!((c - DMatrix::identity(2, 2) * 0.8).norm() < 1e-4, "{c}");
    assert!(report.max_residual() < 1e-8);
}

#[test]
fn uniform_limit_matches_hom_on_regular_graph() {
    let g = Graph::ring(5).unwrap();
    let data = iid_data(&g, 1, 1, 400, 5, |h, u| {
        (0..5)
            .map(|i| {
                let hood = g.hood(i);
                let mean = hood.iter().map(|&j| h[j][0]).sum::<f64>() / hood.len() as f64;
                DVector::from_element(1, 0.8 * mean + 0.3 * u[i][0])
            })
            .collect()
    });
    let pot = GibbsPotential::Gaussian { sigma: 1e6 };
    let (hm, _) = fit_features(&data, &tiny_ridge(Form::HomMean).with_potential(pot)).unwrap();
    let (hom, _) = fit_features(&data, &tiny_ridge(Form::Hom)).unwrap();
    let mut rng = seeded(50);
    for _ in 0..10 {
        let h = random_frame(&mut rng, 5, 1);
        let a = random_frame(&mut rng, 5, 1);
        let p = hm.predict(&h, &a).unwrap();
        let q = hom.predict(&h, &a).unwrap();
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).norm() < 1e-6);
        }
    }
}

#[test]
fn tensor_with_constant_action_matches_dense_history() {
    let g = Graph::chain(3).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.4]);
    let step = |h: &Frame, _: &Frame| -> Frame {
        (0..3)
            .map(|i| g.hood(i).iter().fold(DVector::zeros(2), |acc, &j| acc + &a * &h[j] * 0.5))
            .collect()
    };
    let mut rng = seeded(6);
    let seqs: Vec<_> = (0..200)
        .map(|_| {
            let h = random_frame(&mut rng, 3, 2);
            // action feature [1, 0]: constant coordinate, zero action
            let act = vec![DVector::from_vec(vec![1.0, 0.0]); 3];
            simulate(&g, h, vec![act], step)
        })
        .collect();
    let data = FeatureData::new(g.clone(), 2, 2, seqs).unwrap();
    let (tensor, report) = fit_features(&data, &tiny_ridge(Form::Tensor)).unwrap();
    assert!(report.max_residual() < 1e-8);
    let (dense, _) = fit_features(&data, &tiny_ridge(Form::Dense)).unwrap();
    let h = random_frame(&mut rng, 3, 2);
    let act = vec![DVector::from_vec(vec![1.0, 0.0]); 3];
    let p = tensor.predict(&h, &act).unwrap();
    let q = dense.predict(&h, &act).unwrap();
    let truth = step(&h, &act);
    for i in 0..3 {
        assert!((&p[i] - &q[i]).norm() < 1e-5);
        assert!((&p[i] - &truth[i]).norm() < 1e-5);
    }
}

#[test]
fn tensor_recovers_bilinear_coefficient() {
    let g = Graph::single_node();
    let data = iid_data(&g, 1, 1, 10_000, 7, |h, a| scalar_frame(&[h[0][0] * a[0][0]]));
    let (model, _) = fit_features(&data, &FitConfig::new(Form::Tensor)).unwrap();
    assert!((model.history_block(0, 0).unwrap()[(0, 0)] - 1.0).abs() < 1e-3);
    assert!(model.action_block(0, 0).is_none());
}

#[test]
fn tensor_guard_rejects_large_products() {
    let g = Graph::single_node();
    let data = FeatureData::new(
        g,
        65,
        64,
        vec![FeatureSequence {
            frames: vec![vec![DVector::zeros(65)]; 2],
            actions: vec![vec![DVector::zeros(64)]],
        }],
    )
    .unwrap();
    assert!(matches!(
        fit_features(&data, &FitConfig::new(Form::Tensor)),
        Err(Error::TensorTooLarge(..))
    ));
}

#[test]
fn config_validation() {
    assert!(FitConfig::new(Form::HomMean).validate().is_err());
    assert!(FitConfig::new(Form::Dense).with_ridge(Ridge::Fixed(0.0)).validate().is_err());
    assert_eq!("hom+mean".parse::<Form>().unwrap(), Form::HomMean);
    assert!("triangle".parse::<Form>().is_err());
}

fn random_model(form: Form, seed: u64) -> (EmbeddingModel, Graph) {
    let mut rng = seeded(seed);
    let n = rng.random_range(2..6);
    let g = Graph::erdos_renyi(n, 0.6, seed, 1000).unwrap();
    let (d, da) = (rng.random_range(1..4), rng.random_range(1..3));
    let mats: Vec<DMatrix<f64>> = (0..n)
        .map(|_| DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5)))
        .collect();
    let bm: Vec<DMatrix<f64>> = (0..n)
        .map(|_| DMatrix::from_fn(d, da, |_, _| rng.random_range(-0.5..0.5)))
        .collect();
    let data = iid_data(&g, d, da, 30, seed + 1, |h, a| {
        (0..n)
            .map(|i| {
                g.hood(i).iter().fold(DVector::zeros(d), |acc, &j| {
                    acc + &mats[(i + j) % n] * &h[j] + &bm[j] * &a[j] + h[j].map(|v| v * v) * 0.1
                })
            })
            .collect()
    });
    let cfg = FitConfig::new(form).with_potential(GibbsPotential::Gaussian { sigma: 0.8 });
    (fit_features(&data, &cfg).unwrap().0, g)
}

fn naive_predict(m: &EmbeddingModel, g: &Graph, h: &Frame, a: &Frame) -> Frame {
    let n = g.n();
    let d = m.feature_dim();
    let da = m.action_dim();
    let mut out = vec![DVector::zeros(d); n];
    for i in 0..n {
        let agg: Option<DVector<f64>> = m.potential().map(|p| {
            let w = gibbs_weights(g, h, &p, i).unwrap();
            let mut s = DVector::zeros(d);
            for j in 0..n {
                for r in 0..d {
                    s[r] += w.weight_of(j) * h[j][r];
                }
            }
            s
        });
        for j in 0..n {
            match m.form() {
                Form::Tensor => {
                    let c = m.history_block(i, j).unwrap();
                    for r in 0..d {
                        for p in 0..d {
                            for q in 0..da {
                                out[i][r] += c[(r, p * da + q)] * h[j][p] * a[j][q];
                            }
                        }
                    }
                }
                _ => {
                    if m.form() != Form::HomMean {
                        let c = m.history_block(i, j).unwrap();
                        for r in 0..d {
                            for p in 0..d {
                                out[i][r] += c[(r, p)] * h[j][p];
                            }
                        }
                    }
                    let k = m.action_block(i, j).unwrap();
                    for r in 0..d {
                        for q in 0..da {
                            out[i][r] += k[(r, q)] * a[j][q];
                        }
                    }
                }
            }
        }
        if let Some(agg) = agg {
            let c = m.shared_history_operator().unwrap();
            for r in 0..d {
                for p in 0..d {
                    out[i][r] += c[(r, p)] * agg[p];
                }
            }
        }
    }
    out
}

#[test]
fn predict_matches_naive_reference() {
    for form in Form::ALL {
        for seed in 0..10 {
            let (m, g) = random_model(form, 100 + seed);
            let mut rng = seeded(seed);
            let h = random_frame(&mut rng, g.n(), m.feature_dim());
            let a = random_frame(&mut rng, g.n(), m.action_dim());
            let fast = m.predict(&h, &a).unwrap();
            let slow = naive_predict(&m, &g, &h, &a);
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).norm() < 1e-12, "{form}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn zero_inputs_and_non_neighbours() {
    for form in Form::ALL {
        let (m, g) = random_model(form, 7);
        let n = g.n();
        let z = m.predict(&vec![DVector::zeros(m.feature_dim()); n], &vec![DVector::zeros(m.action_dim()); n]);
        // vMF-free gaussian potential is fine on zeros
        assert!(z.unwrap().iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn non_neighbour_perturbation_is_ignored() {
    let g = Graph::chain(4).unwrap();
    let data = iid_data(&g, 2, 1, 40, 9, |h, a| h.iter().zip(a).map(|(x, u)| x * 0.5 + DVector::from_element(2, u[0])).collect());
    for form in [Form::Dense, Form::Hom, Form::Tensor] {
        let (m, _) = fit_features(&data, &FitConfig::new(form)).unwrap();
        let mut rng = seeded(1);
        let h = random_frame(&mut rng, 4, 2);
        let a = random_frame(&mut rng, 4, 1);
        let base = m.predict(&h, &a).unwrap();
        let mut h2 = h.clone();
        h2[3] = random_vector(&mut rng, 2, 5.0);
        let mut a2 = a.clone();
        a2[3] = random_vector(&mut rng, 1, 5.0);
        let moved = m.predict(&h2, &a2).unwrap();
        assert_eq!(base[0], moved[0]);
        assert_eq!(base[1], moved[1]);
        assert!(m.history_block(0, 3).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn hom_mean_identity_operator_returns_aggregate() {
    let g = Graph::chain(3).unwrap();
    let pot = GibbsPotential::Laplace { scale: 0.5 };
    let data = iid_data(&g, 2, 1, 200, 11, |h, _| aggregate_history(&g, h, &all_weights(&g, h, &pot).unwrap()).unwrap());
    let (m, _) = fit_features(&data, &FitConfig::new(Form::HomMean).with_ridge(Ridge::Fixed(1e-12)).with_potential(pot)).unwrap();
    let mut rng = seeded(3);
    let h = random_frame(&mut rng, 3, 2);
    let p = m.predict(&h, &vec![DVector::zeros(1); 3]).unwrap();
    let agg = aggregate_history(&g, &h, &all_weights(&g, &h, &pot).unwrap()).unwrap();
    for (x, y) in p.iter().zip(&agg) {
        assert!((x - y).norm() < 1e-6);
    }
}

#[test]
fn rollout_is_matrix_power() {
    let g = Graph::single_node();
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.3, 0.8]);
    let data = iid_data(&g, 2, 1, 50, 12, |h, _| vec![&a * &h[0]]);
    let (m, _) = fit_features(&data, &tiny_ridge(Form::Dense)).unwrap();
    let x0 = vec![DVector::from_vec(vec![1.0, -1.0])];
    let actions = vec![vec![DVector::zeros(1)]; 20];
    let traj = m.rollout(&x0, &actions).unwrap();
    let c = m.history_block(0, 0).unwrap();
    let mut x = x0[0].clone();
    for frame in &traj {
        x = &c * x;
        assert!((&frame[0] - &x).norm() < 1e-8);
    }
    let one = m.rollout(&x0, &actions[..1]).unwrap();
    assert_eq!(one[0], m.predict(&x0, &actions[0]).unwrap());
    assert!(m.rollout(&x0, &[]).is_err());
}

#[test]
fn model_round_trips_through_disk() {
    for form in Form::ALL {
        let (m, _) = random_model(form, 21);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = EmbeddingModel::load(dir.path()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.checksum(), back.checksum());
        let mut bytes = std::fs::read(dir.path().join("blocks.bin")).unwrap();
        bytes[0] ^= 1;
        std::fs::write(dir.path().join("blocks.bin"), bytes).unwrap();
        assert!(EmbeddingModel::load(dir.path()).is_err());
    }
}

fn linear_dataset(seed: u64, episodes: usize) -> (Dataset, DMatrix<f64>) {
    let g = Graph::chain(3).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.1, -0.1, 0.5]);
    let mut rng = seeded(seed);
    let trajectories = (0..episodes)
        .map(|e| {
            let mut obs = vec![random_frame(&mut rng, 3, 2)];
            let mut actions = Vec::new();
            for _ in 0..30 {
                let u = random_frame(&mut rng, 3, 1);
                let h = obs.last().unwrap();
                let next: Frame = (0..3)
                    .map(|i| {
                        let hood = g.hood(i);
                        let s = hood.iter().fold(DVector::zeros(2), |acc, &j| acc + &h[j]) / hood.len() as f64;
                        &a * s + DVector::from_element(2, u[i][0])
                    })
                    .collect();
                obs.push(next);
                actions.push(u);
            }
            Trajectory {
                seed: e as u64,
                observations: obs,
                actions,
            }
        })
        .collect();
    (Dataset::new(g, 2, 1, trajectories, serde_json::Value::Null, seed).unwrap(), a)
}

#[test]
fn nrmse_of_exact_model_is_small() {
    let (train, _) = linear_dataset(1, 20);
    let (test, _) = linear_dataset(2, 5);
    let map = FeatureMap::identity(2, false);
    let proj = ActionProjection::identity(1);
    let (model, _) = fit(&train, &map, &proj, &tiny_ridge(Form::Dense)).unwrap();
    let feats: Vec<_> = train.observation_vectors().cloned().collect();
    let decoder = Decoder::fit(&feats, &feats, 1e-12).unwrap();
    let curve = prediction_nrmse(&model, &map, &proj, &decoder, &test, 10).unwrap();
    assert!(curve.at(1).unwrap().pooled < 0.05);
    assert!(curve.steps.iter().all(|s| s.pooled < 1e-6));
    assert!(prediction_nrmse(&model, &map, &proj, &decoder, &test, 31).is_err());
}

#[test]
fn nrmse_of_mean_predictor_is_one() {
    // A model that predicts zero on data whose mean is zero per coordinate:
    // build a symmetric test set by pairing every trajectory with its negation.
    let (base, _) = linear_dataset(3, 4);
    let mut test = base.clone();
    for t in &base.trajectories {
        test.trajectories.push(Trajectory {
            seed: t.seed + 100,
            observations: t.observations.iter().map(|f| f.iter().map(|v| -v).collect()).collect(),
            actions: t.actions.iter().map(|f| f.iter().map(|v| -v).collect()).collect(),
        });
    }
    let map = FeatureMap::identity(2, false);
    let proj = ActionProjection::identity(1);
    let zero_data = FeatureData::encode(&test, &map, &proj).unwrap();
    let zeroed = FeatureData {
        sequences: zero_data
            .sequences
            .iter()
            .map(|s| FeatureSequence {
                frames: s.frames.iter().map(|f| f.iter().map(|v| v * 0.0).collect()).collect(),
                actions: s.actions.clone(),
            })
            .collect(),
        ..zero_data
    };
    let (model, _) = fit_features(&zeroed, &FitConfig::new(Form::Dense)).unwrap();
    let decoder = Decoder::fit(&[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])], &[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])], 0.0).unwrap();
    let curve = prediction_nrmse(&model, &map, &proj, &decoder, &test, 30).unwrap();
    // Per-step errors vary; pooled over the whole horizon they equal the
    // normalising deviation up to the initial frames' share of the variance.
    for s in &curve.steps {
        assert!(s.pooled.is_finite());
    }
    let total: f64 = curve.steps.iter().map(|s| s.pooled * s.pooled).sum::<f64>() / 30.0;
    // variance is pooled over steps 0..=30, the error over steps 1..=30
    let share = {
        let std = crate::linalg::coordinate_std(test.observation_vectors(), 2);
        let first = crate::linalg::coordinate_std(test.trajectories.iter().flat_map(|t| t.observations[0].iter()), 2);
        let all = 31.0 * (std[0].powi(2) / std[0].powi(2) + std[1].powi(2) / std[1].powi(2));
        let init = first[0].powi(2) / std[0].powi(2) + first[1].powi(2) / std[1].powi(2);
        (all - init) / (30.0 * 2.0)
    };
    assert!((total - share).abs() < 1e-9, "{total} vs {share}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prediction_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        for form in [Form::Dense, Form::Hom] {
            let (m, g) = random_model(form, seed);
            let mut rng = seeded(seed ^ 0xabc);
            let n = g.n();
            let (hx, ax) = (random_frame(&mut rng, n, m.feature_dim()), random_frame(&mut rng, n, m.action_dim()));
            let (hy, ay) = (random_frame(&mut rng, n, m.feature_dim()), random_frame(&mut rng, n, m.action_dim()));
            let comb = |x: &Frame, y: &Frame| -> Frame { x.iter().zip(y).map(|(a, b)| a * alpha + b * beta).collect() };
            let lhs = m.predict(&comb(&hx, &hy), &comb(&ax, &ay)).unwrap();
            let rhs = comb(&m.predict(&hx, &ax).unwrap(), &m.predict(&hy, &ay).unwrap());
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r).norm() < 1e-10 * (1.0 + r.norm()));
            }
        }
    }

    #[test]
    fn tensor_and_frozen_hom_mean_are_linear_per_argument(seed in 0u64..1000, alpha in -2.0f64..2.0) {
        let (m, g) = random_model(Form::Tensor, seed);
        let mut rng = seeded(seed ^ 0xdef);
        let n = g.n();
        let h = random_frame(&mut rng, n, m.feature_dim());
        let (ax, ay) = (random_frame(&mut rng, n, m.action_dim()), random_frame(&mut rng, n, m.action_dim()));
        let sum: Frame = ax.iter().zip(&ay).map(|(a, b)| a * alpha + b).collect();
        let lhs = m.predict(&h, &sum).unwrap();
        let px = m.predict(&h, &ax).unwrap();
        let py = m.predict(&h, &ay).unwrap();
        for i in 0..n {
            prop_assert!((&lhs[i] - (&px[i] * alpha + &py[i])).norm() < 1e-10 * (1.0 + lhs[i].norm()));
        }

        let (m, g) = random_model(Form::HomMean, seed);
        let n = g.n();
        let w = m.weights(&random_frame(&mut rng, n, m.feature_dim())).unwrap().unwrap();
        let (hx, hy) = (random_frame(&mut rng, n, m.feature_dim()), random_frame(&mut rng, n, m.feature_dim()));
        let a = random_frame(&mut rng, n, m.action_dim());
        let za = vec![DVector::zeros(m.action_dim()); n];
        let hsum: Frame = hx.iter().zip(&hy).map(|(x, y)| x * alpha + y).collect();
        let lhs = m.predict_with_weights(&hsum, &a, Some(&w)).unwrap();
        let px = m.predict_with_weights(&hx, &za, Some(&w)).unwrap();
        let py = m.predict_with_weights(&hy, &a, Some(&w)).unwrap();
        for i in 0..n {
            prop_assert!((&lhs[i] - (&px[i] * alpha + &py[i])).norm() < 1e-10 * (1.0 + lhs[i].norm()));
        }
    }
}
