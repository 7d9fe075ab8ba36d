use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::*;
use crate::embedding::{fit, FitConfig, Ridge};
use crate::features::random_vector;
use crate::mean_field::GibbsPotential;
use crate::rng::seeded;
use crate::sim::{generate_dataset, ActionPolicy, EnvConfig, LinearConfig, WeightSpec};

fn fitted(form: Form, weights: WeightSpec, seed: u64) -> (EmbeddingModel, Environment) {
    let env = EnvConfig::Linear(LinearConfig {
        nodes: 4,
        edge_prob: 0.6,
        weights,
        ..LinearConfig::default()
    })
    .build(seed)
    .unwrap();
    let ds = generate_dataset(&env, 10, 30, ActionPolicy::Random { amplitude: 1.0 }, seed).unwrap();
    let cfg = FitConfig::new(form)
        .with_ridge(Ridge::Fixed(1e-9))
        .with_potential(GibbsPotential::Gaussian { sigma: 1.0 });
    let (m, _) = fit(&ds, &FeatureMap::identity(2, false), &ActionProjection::identity(1), &cfg).unwrap();
    (m, env)
}

fn random_actions(rng: &mut impl Rng, m: usize, n: usize, da: usize) -> Vec<Frame> {
    (0..m).map(|_| (0..n).map(|_| random_vector(rng, da, 1.0)).collect()).collect()
}

fn inner(a: &[Frame], b: &[Frame]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x.dot(y)).sum()
}

#[test]
fn affine_map_matches_frozen_rollout() {
    let (m, _) = fitted(Form::HomMean, WeightSpec::Gibbs { potential: GibbsPotential::Gaussian { sigma: 1.0 } }, 1);
    let mut rng = seeded(2);
    let n = m.graph().n();
    let x0: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
    let lin = linearize_rollout(&m, &x0, 12).unwrap();
    let zero = vec![vec![DVector::zeros(1); n]; 12];
    assert_eq!(lin.apply_affine(&zero).unwrap(), lin.free);
    let a = random_actions(&mut rng, 12, n, 1);
    let direct = m.rollout_frozen(&x0, &a, lin.frozen_weights().unwrap()).unwrap();
    let affine = lin.apply_affine(&a).unwrap();
    for (p, q) in direct.iter().flatten().zip(affine.iter().flatten()) {
        assert!((p - q).norm() < 1e-10);
    }
}

#[test]
fn adjoint_is_transpose() {
    for form in [Form::Dense, Form::Hom, Form::HomMean] {
        let (m, _) = fitted(form, WeightSpec::Random { spread: 1.0 }, 3);
        let mut rng = seeded(4);
        let n = m.graph().n();
        let x0: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
        let lin = linearize_rollout(&m, &x0, 7).unwrap();
        let z = random_actions(&mut rng, 7, n, 1);
        let y = random_actions(&mut rng, 7, n, 2);
        let lhs = inner(&lin.apply(&z).unwrap(), &y);
        let rhs = inner(&z, &lin.apply_adjoint(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{form}: {lhs} vs {rhs}");
        let l = lin.materialize().unwrap();
        let zs = DVector::from_iterator(7 * n, z.iter().flatten().map(|v| v[0]));
        let ys = DVector::from_iterator(7 * n * 2, y.iter().flatten().flat_map(|v| v.iter().copied()));
        assert!(((&l * zs).dot(&ys) - lhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn one_step_map_is_action_block() {
    let g = crate::graph::Graph::single_node();
    let seqs = (0..20)
        .map(|k| {
            let h = vec![DVector::from_vec(vec![k as f64 * 0.1, 1.0 - k as f64 * 0.05])];
            let a = vec![DVector::from_vec(vec![(k as f64).sin(), (k as f64).cos()])];
            crate::embedding::FeatureSequence {
                frames: vec![h.clone(), vec![&h[0] + &a[0]]],
                actions: vec![a],
            }
        })
        .collect();
    let data = crate::embedding::FeatureData::new(g, 2, 2, seqs).unwrap();
    let (m, _) = crate::embedding::fit_features(&data, &FitConfig::new(Form::Dense).with_ridge(Ridge::Fixed(1e-12))).unwrap();
    let lin = linearize_rollout(&m, &vec![DVector::zeros(2)], 1).unwrap();
    let l = lin.materialize().unwrap();
    assert!((&l - m.action_block(0, 0).unwrap()).norm() < 1e-14);
    assert!((&l - DMatrix::<f64>::identity(2, 2)).norm() < 1e-6);
}

#[test]
fn fixed_point_needs_no_action() {
    for form in [Form::Dense, Form::HomMean] {
        let (m, _) = fitted(form, WeightSpec::Random { spread: 1.0 }, 5);
        let n = m.graph().n();
        let zero = vec![DVector::zeros(2); n];
        let p = ControlProblem::new(20, zero.clone(), 1);
        let sol = solve_lqr(&p, &m, &zero, &ActionProjection::identity(1), &SolverOptions::default()).unwrap();
        let norm: f64 = sol.actions.iter().flatten().map(|a| a.norm_squared()).sum::<f64>().sqrt();
        assert!(norm < 1e-8);
    }
}

/// Double integrator `p' = p + dt v + dt²/2 u`, `v' = v + dt u`.
fn double_integrator(dt: f64) -> (DMatrix<f64>, DMatrix<f64>, EmbeddingModel) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
    let mut rng = seeded(8);
    let seqs = (0..60)
        .map(|_| {
            let h = vec![random_vector(&mut rng, 2, 1.0)];
            let u = vec![random_vector(&mut rng, 1, 1.0)];
            crate::embedding::FeatureSequence {
                frames: vec![h.clone(), vec![&a * &h[0] + &b * &u[0]]],
                actions: vec![u],
            }
        })
        .collect();
    let data = crate::embedding::FeatureData::new(crate::graph::Graph::single_node(), 2, 1, seqs).unwrap();
    let (m, _) = crate::embedding::fit_features(&data, &FitConfig::new(Form::Dense).with_ridge(Ridge::Fixed(1e-13))).unwrap();
    (a, b, m)
}

#[test]
fn double_integrator_matches_batch_oracle() {
    let (a, b, model) = double_integrator(1.0);
    let horizon = 40;
    let x0 = DVector::from_vec(vec![0.0, 0.0]);
    let target = DVector::from_vec(vec![1.0, 0.0]);
    let problem = ControlProblem::new(horizon, vec![target.clone()], 1).with_costs(DMatrix::identity(2, 2), DMatrix::identity(1, 1) * 1e-4);
    let sol = solve_lqr(&problem, &model, &vec![x0.clone()], &ActionProjection::identity(1), &SolverOptions::default()).unwrap();

    // oracle: stacked x = Φ x0 + Γ u, minimise ‖x − x*‖² + 1e-4 ‖u‖²
    let mut phi = DMatrix::zeros(2 * horizon, 2);
    let mut gamma = DMatrix::zeros(2 * horizon, horizon);
    let mut ak = DMatrix::identity(2, 2);
    for t in 0..horizon {
        ak = &a * ak;
        phi.view_mut((2 * t, 0), (2, 2)).copy_from(&ak);
        for s in 0..=t {
            let mut blk = b.clone();
            for _ in s..t {
                blk = &a * blk;
            }
            gamma.view_mut((2 * t, s), (2, 1)).copy_from(&blk);
        }
    }
    let stacked_target = DVector::from_fn(2 * horizon, |k, _| target[k % 2]);
    let lhs = gamma.tr_mul(&gamma) + DMatrix::identity(horizon, horizon) * 1e-4;
    let rhs = gamma.tr_mul(&(stacked_target - &phi * &x0));
    let u = lhs.cholesky().unwrap().solve(&rhs);
    for t in 0..horizon {
        assert!((sol.actions[t][0][0] - u[t]).abs() < 1e-4 * (1.0 + u[t].abs()), "step {t}");
    }
    let final_pos = sol.predicted[horizon - 1][0][0];
    assert!((final_pos - 1.0).abs() < 1e-3, "{final_pos}");
    let oracle_final = (&phi * &x0 + &gamma * &u)[2 * horizon - 2];
    assert!((oracle_final - 1.0).abs() < 1e-3);
    assert!(sol.relative_gradient() < 1e-6);
}

#[test]
fn cg_and_dense_agree_and_are_optimal() {
    for form in [Form::Dense, Form::Hom, Form::HomMean] {
        let (m, _) = fitted(form, WeightSpec::Random { spread: 0.5 }, 9);
        let mut rng = seeded(10);
        let n = m.graph().n();
        let x0: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
        let target: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 0.5)).collect();
        let p = ControlProblem::new(15, target, 1);
        let proj = ActionProjection::identity(1);
        let dense = solve_lqr(&p, &m, &x0, &proj, &SolverOptions::default()).unwrap();
        let cg = solve_lqr(&p, &m, &x0, &proj, &SolverOptions { max_dense_variables: 0, ..SolverOptions::default() }).unwrap();
        assert_eq!(dense.method, SolveMethod::Dense);
        assert_eq!(cg.method, SolveMethod::ConjugateGradient);
        assert!(dense.relative_gradient() < 1e-6);
        assert!(cg.relative_gradient() < 1e-6);
        assert!((dense.cost - cg.cost).abs() < 1e-8 * (1.0 + dense.cost));

        let lin = linearize_rollout(&m, &x0, 15).unwrap();
        let zero = vec![vec![DVector::zeros(1); n]; 15];
        assert!(dense.cost <= p.cost(&lin.free, &zero) + 1e-12);
        for _ in 0..100 {
            let a = random_actions(&mut rng, 15, n, 1);
            assert!(dense.cost <= p.cost(&lin.apply_affine(&a).unwrap(), &a) + 1e-12);
        }
    }
}

#[test]
fn larger_action_cost_shrinks_actions() {
    let mut rng = seeded(11);
    let (m, _) = fitted(Form::Dense, WeightSpec::Random { spread: 1.0 }, 12);
    let n = m.graph().n();
    let proj = ActionProjection::identity(1);
    for _ in 0..100 {
        let x0: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
        let target: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
        let q2 = rng.random_range(1e-4..1.0);
        let p = ControlProblem::new(6, target, 1).with_costs(DMatrix::identity(2, 2), DMatrix::identity(1, 1) * q2);
        let p10 = ControlProblem { q2: &p.q2 * 10.0, ..p.clone() };
        let norm = |s: &LqrSolution| s.action_features.iter().flatten().map(|a| a.norm_squared()).sum::<f64>().sqrt();
        let a = solve_lqr(&p, &m, &x0, &proj, &SolverOptions::default()).unwrap();
        let b = solve_lqr(&p10, &m, &x0, &proj, &SolverOptions::default()).unwrap();
        assert!(norm(&b) <= norm(&a) * (1.0 + 1e-9));
    }
}

#[test]
fn controllable_linear_system_reaches_target() {
    let env = EnvConfig::Linear(LinearConfig {
        nodes: 4,
        edge_prob: 0.6,
        action_dim: 2,
        ..LinearConfig::default()
    })
    .build(13)
    .unwrap();
    let ds = generate_dataset(&env, 10, 30, ActionPolicy::Random { amplitude: 1.0 }, 13).unwrap();
    let map = FeatureMap::identity(2, false);
    let proj = ActionProjection::identity(2);
    let (m, _) = fit(&ds, &map, &proj, &FitConfig::new(Form::Dense).with_ridge(Ridge::Fixed(1e-9))).unwrap();
    let n = m.graph().n();
    let mut rng = seeded(14);
    let x0: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
    let target: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
    let p = ControlProblem::new(40, target.clone(), 2).with_costs(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e-8);
    let res = receding_horizon_control(&env, &m, &map, &proj, &p, &x0, &mut rng, &SolverOptions::default()).unwrap();
    let err = control_error(res.observations.last().unwrap(), &target).unwrap();
    assert!(err < 1e-2, "{err}");
}

#[test]
fn feedback_on_exact_model_reproduces_open_loop_tail() {
    let (m, env) = fitted(Form::Dense, WeightSpec::Random { spread: 1.0 }, 15);
    let n = m.graph().n();
    let map = FeatureMap::identity(2, false);
    let proj = ActionProjection::identity(1);
    let mut rng = seeded(16);
    let x0: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 1.0)).collect();
    let target: Frame = (0..n).map(|_| random_vector(&mut rng, 2, 0.3)).collect();
    let open = ControlProblem::new(20, target.clone(), 1);
    let closed = open.clone().with_feedback(10);
    let same = open.clone().with_feedback(20);
    let opts = SolverOptions::default();
    let a = receding_horizon_control(&env, &m, &map, &proj, &open, &x0, &mut seeded(1), &opts).unwrap();
    let b = receding_horizon_control(&env, &m, &map, &proj, &closed, &x0, &mut seeded(1), &opts).unwrap();
    let c = receding_horizon_control(&env, &m, &map, &proj, &same, &x0, &mut seeded(1), &opts).unwrap();
    assert_eq!(a, c);
    assert_eq!(b.solves, 2);
    let diff: f64 = a.actions[10..]
        .iter()
        .flatten()
        .zip(b.actions[10..].iter().flatten())
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        .sqrt();
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn metrics_definitions() {
    let v = |x: &[f64]| DVector::from_vec(x.to_vec());
    assert_eq!(control_error(&[v(&[1.0, 1.0])], &[v(&[1.0, 1.0])]).unwrap(), 0.0);
    assert!((control_error(&[v(&[0.0, 0.0])], &[v(&[1.0, 2.0])]).unwrap() - 1.0).abs() < 1e-15);
    assert!((control_error(&[v(&[1.1, 0.9])], &[v(&[1.0, 1.0])]).unwrap() - 0.1).abs() < 1e-12);
    assert!(control_error(&[v(&[1.0])], &[v(&[0.0])]).is_err());
}

#[test]
fn invalid_problems_are_rejected() {
    let (m, _) = fitted(Form::Dense, WeightSpec::Uniform, 17);
    let n = m.graph().n();
    let t = vec![DVector::zeros(2); n];
    let p = ControlProblem::new(5, t.clone(), 1);
    assert!(ControlProblem { q2: DMatrix::zeros(1, 1), ..p.clone() }.validate(&m).is_err());
    assert!(ControlProblem { q1: -DMatrix::identity(2, 2), ..p.clone() }.validate(&m).is_err());
    assert!(ControlProblem { horizon: 0, ..p.clone() }.validate(&m).is_err());
    assert!(p.clone().with_feedback(6).validate(&m).is_err());
    assert!(ControlProblem::new(5, vec![DVector::zeros(3); n], 1).validate(&m).is_err());
}
