//! The closed-form inscribed ball against the S-procedure feasibility test for
//! each clause of the flat input set.
//!
//! `|v|^2 <= rho  =>  q(v) <= 0` holds iff some `tau >= 0` makes
//! `-q(v) - tau (rho - |v|^2)` a nonnegative quadratic form in `(v, 1)`.

use flatsat::constraints::{max_inscribed_ball, ConstraintParams};
use flatsat::linalg::{golden_max, min_eigenvalue};
use nalgebra::Matrix4;

fn ball_lmi(p: &ConstraintParams, rho: f64, tau: f64) -> Matrix4<f64> {
    // T^2 - |v + g e3|^2 - tau (rho - |v|^2)
    let g = p.g();
    let t = p.t_max();
    let mut m = Matrix4::zeros();
    for i in 0..3 {
        m[(i, i)] = tau - 1.0;
    }
    m[(2, 3)] = -g;
    m[(3, 2)] = -g;
    m[(3, 3)] = t * t - g * g - tau * rho;
    m
}

fn cone_lmi(p: &ConstraintParams, rho: f64, tau: f64) -> Matrix4<f64> {
    // tan^2 (v3 + g)^2 - v1^2 - v2^2 - tau (rho - |v|^2)
    let g = p.g();
    let k = p.tan_eps_max_sq();
    let mut m = Matrix4::zeros();
    m[(0, 0)] = tau - 1.0;
    m[(1, 1)] = tau - 1.0;
    m[(2, 2)] = k + tau;
    m[(2, 3)] = k * g;
    m[(3, 2)] = k * g;
    m[(3, 3)] = k * g * g - tau * rho;
    m
}

fn plane_lmi(p: &ConstraintParams, rho: f64, tau: f64) -> Matrix4<f64> {
    // v3 + g - tau (rho - |v|^2)
    let mut m = Matrix4::zeros();
    for i in 0..3 {
        m[(i, i)] = tau;
    }
    m[(2, 3)] = 0.5;
    m[(3, 2)] = 0.5;
    m[(3, 3)] = p.g() - tau * rho;
    m
}

fn best_slack(lmi: impl Fn(f64) -> Matrix4<f64>) -> f64 {
    golden_max(|tau| min_eigenvalue(&lmi(tau)), 0.0, 50.0, 300).1
}

#[test]
fn all_clauses_certified_at_closed_form_radius() {
    let p = ConstraintParams::table_one();
    let rho = max_inscribed_ball(&p).rho;
    for (name, slack) in [
        ("ball", best_slack(|t| ball_lmi(&p, rho, t))),
        ("cone", best_slack(|t| cone_lmi(&p, rho, t))),
        ("plane", best_slack(|t| plane_lmi(&p, rho, t))),
    ] {
        assert!(slack >= -1e-9, "{name}: {slack}");
    }
}

#[test]
fn binding_clause_fails_just_beyond() {
    let p = ConstraintParams::table_one();
    let rho = max_inscribed_ball(&p).rho * 1.001;
    assert!(best_slack(|t| cone_lmi(&p, rho, t)) < -1e-9);
    // the thrust sphere has room to spare at this tilt limit
    assert!(best_slack(|t| ball_lmi(&p, rho, t)) > 0.0);
}

#[test]
fn thrust_binds_for_weak_vehicle() {
    let p = ConstraintParams::new(9.81, 1.05 * 9.81, 0.5, 0.5).unwrap();
    let rho = max_inscribed_ball(&p).rho;
    assert!((rho - (0.05 * 9.81f64).powi(2)).abs() < 1e-12);
    assert!(best_slack(|t| ball_lmi(&p, rho, t)) >= -1e-9);
    assert!(best_slack(|t| ball_lmi(&p, rho * 1.001, t)) < -1e-9);
    assert!(best_slack(|t| cone_lmi(&p, rho * 1.001, t)) > 0.0);
}
