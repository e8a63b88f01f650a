//! Fixed points of the replica solvers: stationarity, exact reductions and
//! discretization error.

use kd_core::estimators::bayes_optimal_error;
use kd_core::model::ModelParams;
use kd_core::solver::*;
use kd_core::Error;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn max_abs(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |a, v| a.max(v.abs()))
}

#[test]
fn teacher_fixed_points_are_stationary() {
    for (alpha, lambda_t, eps) in [(3.0, 0.1, 0.0), (1.0, 1e-5, 0.0), (2.0, 0.5, 0.1)] {
        let p = ModelParams { alpha, lambda_t, eps_smooth: eps, ..Default::default() };
        let t = solve_teacher(&p, &cfg()).unwrap();
        let g = teacher_gradient(&p, &t, &cfg()).unwrap();
        assert!(max_abs(&g) < 1e-5, "alpha {alpha}, lambda {lambda_t}: {g:?}");
    }
}

#[test]
fn student_fixed_points_are_stationary() {
    let settings = [
        ModelParams { alpha: 3.0, lambda_t: 0.1, ..Default::default() },
        ModelParams { alpha: 4.5, lambda_t: 0.1, lambda_s: 0.1, chi: 0.5, temp: 2.0, ..Default::default() },
        ModelParams { alpha: 0.5, lambda_t: 0.15, ..Default::default() },
    ];
    for p in settings {
        let t = solve_teacher(&p, &cfg()).unwrap();
        let s = solve_kd(&p, &t, &cfg()).unwrap();
        let g = kd_gradient(&p, &t, &s, &cfg()).unwrap();
        assert!(max_abs(&g) < 1e-5, "{p:?}: {g:?}");
        assert!(s.q > 0.0 && s.dq > 0.0);
        assert!(s.s * s.s <= s.q * t.q_t * (1.0 + 1e-8));
    }
}

#[test]
fn signal_plus_noise_fixed_point_is_stationary() {
    let p = ModelParams { alpha: 5.0, ..Default::default() };
    let s = solve_bo_kd(&p, &cfg(), BoTeacherVariant::Plus).unwrap();
    let g = bo_gradient(&p, &s, &cfg(), BoTeacherVariant::Plus).unwrap();
    assert!(max_abs(&g) < 1e-5, "{g:?}");
}

#[test]
fn pure_label_student_is_a_rescaled_teacher() {
    for (alpha, delta, eta, lambda) in [(2.0, 1.0, 0.5, 0.1), (0.7, 0.5, 0.3, 0.05), (4.0, 2.0, 0.8, 1e-3)] {
        let p = ModelParams { alpha, delta, eta, lambda_s: lambda, chi: 0.0, temp: 3.0, ..Default::default() };
        let t = solve_teacher(&p, &cfg()).unwrap();
        let s = solve_kd(&p, &t, &cfg()).unwrap();
        let r = direct_student(&p, lambda, &cfg()).unwrap();
        assert!((s.eps_g - r.eps_g).abs() < 1e-6, "{} vs {}", s.eps_g, r.eps_g);
        assert!((s.m - r.m_t).abs() < 1e-6 * (1.0 + r.m_t.abs()));
        assert!((eta * s.q - r.q_t).abs() < 1e-5 * r.q_t);
        assert!((eta * s.dq - r.dq_t).abs() < 1e-5 * r.dq_t);
    }
}

#[test]
fn doubling_the_quadrature_changes_little() {
    let fine = SolverConfig { quad_order: 120, ..cfg() };
    let p = ModelParams { alpha: 2.0, lambda_t: 0.1, ..Default::default() };
    let t60 = solve_teacher(&p, &cfg()).unwrap();
    let t120 = solve_teacher(&p, &fine).unwrap();
    assert!((t60.eps_g - t120.eps_g).abs() < 1e-6);
    let s60 = solve_kd(&p, &t60, &cfg()).unwrap();
    let s120 = solve_kd(&p, &t120, &fine).unwrap();
    assert!((s60.eps_g - s120.eps_g).abs() < 1e-6);
    let b60 = solve_bo_kd(&p, &cfg(), BoTeacherVariant::Plus).unwrap();
    let b120 = solve_bo_kd(&p, &fine, BoTeacherVariant::Plus).unwrap();
    assert!((b60.eps_g - b120.eps_g).abs() < 1e-6);
}

#[test]
fn signal_plus_noise_teacher_variant() {
    for alpha in [1.0, 3.0, 6.0] {
        let p = ModelParams { alpha, ..Default::default() };
        let bayes = bayes_optimal_error(alpha, p.delta, p.rho, 1.0).unwrap();
        let plus = bo_teacher_channel_error(&p, BoTeacherVariant::Plus).unwrap();
        let minus = bo_teacher_channel_error(&p, BoTeacherVariant::Minus);
        assert!((plus - bayes).abs() < 1e-12);
        if let Ok(minus) = minus {
            assert!((minus - bayes).abs() > 1e-3);
        }
    }
    let p = ModelParams { alpha: 0.5, ..Default::default() };
    assert!(bo_teacher_channel_error(&p, BoTeacherVariant::Minus).is_err());
}

#[test]
fn warm_start_returns_the_same_point() {
    let p = ModelParams { alpha: 2.0, lambda_t: 0.05, ..Default::default() };
    let t = solve_teacher(&p, &cfg()).unwrap();
    let s = solve_kd(&p, &t, &cfg()).unwrap();
    let warm = SolverConfig { init: Some(InitialGuess::from(&s)), ..cfg() };
    let again = solve_kd(&p, &t, &warm).unwrap();
    assert!(again.iterations < s.iterations);
    assert!((again.eps_g - s.eps_g).abs() < 1e-9);
}

#[test]
fn iteration_budget_is_reported() {
    let p = ModelParams { alpha: 2.0, ..Default::default() };
    let tight = SolverConfig { max_iters: 3, ..cfg() };
    match solve_teacher(&p, &tight) {
        Err(Error::NonConvergence { iterations, trajectory, .. }) => {
            assert_eq!(iterations, 3);
            assert_eq!(trajectory.len(), 3);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}
