//! Input constraint sets.
//!
//! `U` is the physical box `0 <= T <= T_max, |phi| <= phi_max, |theta| <= theta_max`.
//! Its image in flat coordinates depends on yaw and is not convex, so the
//! controller works with the yaw-free convex inner set
//!
//! ```text
//! V_c = { v : |v + g e3|^2 <= T_max^2,
//!             v1^2 + v2^2 <= (v3 + g)^2 tan^2(eps_max),
//!             v3 >= -g }
//! ```
//!
//! with `eps_max = min(phi_max, theta_max)`: a ball around the apex-shifted
//! gravity vector intersected with an upward cone whose apex is `(0, 0, -g)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::flat_model::{FlatInput, PhysicalInput};
use crate::DEFAULT_GRAVITY;

/// Default tilt bound for roll and pitch: 10 degrees.
pub const DEFAULT_TILT: f64 = std::f64::consts::PI / 18.0;

/// Default thrust bound as a multiple of gravity.
pub const DEFAULT_THRUST_RATIO: f64 = 1.45;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintParams {
    g: f64,
    t_max: f64,
    phi_max: f64,
    theta_max: f64,
}

impl ConstraintParams {
    pub fn new(g: f64, t_max: f64, phi_max: f64, theta_max: f64) -> Result<Self> {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::InvalidParams(format!(
                "gravity must be positive, got {g}"
            )));
        }
        if !t_max.is_finite() || t_max <= g {
            return Err(Error::InvalidParams(format!(
                "infeasible hover: T_max = {t_max} must exceed g = {g}"
            )));
        }
        for (name, angle) in [("phi_max", phi_max), ("theta_max", theta_max)] {
            if !(angle > 0.0 && angle < FRAC_PI_2) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {angle} must lie in (0, pi/2)"
                )));
            }
        }
        Ok(Self {
            g,
            t_max,
            phi_max,
            theta_max,
        })
    }

    /// g = 9.81 m/s², T_max = 1.45 g, phi_max = theta_max = 10°.
    pub fn table_one() -> Self {
        Self {
            g: DEFAULT_GRAVITY,
            t_max: DEFAULT_THRUST_RATIO * DEFAULT_GRAVITY,
            phi_max: DEFAULT_TILT,
            theta_max: DEFAULT_TILT,
        }
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// Common tilt bound `min(phi_max, theta_max)`.
    pub fn eps_max(&self) -> f64 {
        self.phi_max.min(self.theta_max)
    }

    pub fn tan_eps_max_sq(&self) -> f64 {
        let t = self.eps_max().tan();
        t * t
    }
}

impl Default for ConstraintParams {
    fn default() -> Self {
        Self::table_one()
    }
}

/// Membership in the physical input box, inclusive with slack `tol`.
pub fn in_u(u: &PhysicalInput, p: &ConstraintParams, tol: f64) -> bool {
    u.thrust >= -tol
        && u.thrust <= p.t_max + tol
        && u.roll.abs() <= p.phi_max + tol
        && u.pitch.abs() <= p.theta_max + tol
}

/// Signed slack of `u` against the box: the smallest of the four margins
/// (negative when violated).
pub fn u_margin(u: &PhysicalInput, p: &ConstraintParams) -> f64 {
    [
        u.thrust,
        p.t_max - u.thrust,
        p.phi_max - u.roll.abs(),
        p.theta_max - u.pitch.abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Values of the three defining functions of `V_c` at `v`; each is `<= 0` inside.
///
/// Order: ball `|v + g e3|^2 - T_max^2`, cone `v1^2 + v2^2 - (v3 + g)^2 tan^2(eps_max)`,
/// half-space `-(v3 + g)`.
pub fn vc_clauses(v: &FlatInput, p: &ConstraintParams) -> [f64; 3] {
    let lateral = v.v1() * v.v1() + v.v2() * v.v2();
    let lift = v.v3() + p.g;
    [
        lateral + lift * lift - p.t_max * p.t_max,
        lateral - lift * lift * p.tan_eps_max_sq(),
        -lift,
    ]
}

/// Membership in `V_c` with absolute slack `tol` on each clause.
pub fn in_vc(v: &FlatInput, p: &ConstraintParams, tol: f64) -> bool {
    vc_clauses(v, p).iter().all(|&c| c <= tol)
}

/// Tilt angle `arctan(sqrt(v1^2 + v2^2) / (v3 + g))` that bounds roll and pitch.
pub fn epsilon_angle(v: &FlatInput, g: f64) -> Result<f64> {
    let lift = v.v3() + g;
    if lift.is_nan() || lift <= 0.0 {
        return Err(Error::Domain(format!(
            "tilt angle undefined for v3 = {} <= -g",
            v.v3()
        )));
    }
    Ok((v.v1().hypot(v.v2()) / lift).atan())
}

/// Ball `{ v : |v|^2 <= rho }` in the flat input space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InscribedBall {
    pub rho: f64,
}

impl InscribedBall {
    pub fn radius(&self) -> f64 {
        self.rho.sqrt()
    }

    pub fn contains(&self, v: &FlatInput) -> bool {
        v.norm_squared() <= self.rho
    }
}

/// Largest ball centred at the hover input that fits inside `V_c`.
///
/// The hover point sits on the cone axis at height `g` above the apex, so its
/// distance to the thrust sphere is `T_max - g`, to the cone's lateral surface
/// `g sin(eps_max)`, and to the plane `v3 = -g` it is `g`, which never binds.
/// This is the optimum of the S-procedure program for the ball, in closed form.
pub fn max_inscribed_ball(p: &ConstraintParams) -> InscribedBall {
    let radius = (p.t_max - p.g).min(p.g * p.eps_max().sin());
    InscribedBall {
        rho: radius * radius,
    }
}

/// Numerical inscribed-ball estimate for an arbitrary star-shaped set around
/// the origin: along each of `n_dirs` near-uniform directions, bisect the exit
/// distance of `contains` on `[0, r_max]`, and return the squared minimum.
///
/// Independent of the closed form above; used to cross-check it and to probe
/// alternative set definitions.
pub fn inscribed_ball_by_rays(
    contains: impl Fn(&FlatInput) -> bool,
    n_dirs: usize,
    r_max: f64,
    iters: usize,
) -> f64 {
    let mut best = r_max;
    for d in fibonacci_sphere(n_dirs) {
        let (mut lo, mut hi) = (0.0, best);
        if contains(&FlatInput(d * hi)) {
            continue;
        }
        for _ in 0..iters {
            let mid = 0.5 * (lo + hi);
            if contains(&FlatInput(d * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(lo);
    }
    best * best
}

/// Deterministic, near-uniform unit vectors (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> impl Iterator<Item = Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden * i as f64;
        Vector3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat_model::{accel, to_physical};
    use crate::tol;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: f64 = 9.81;

    fn random_in_vc(rng: &mut ChaCha8Rng, p: &ConstraintParams) -> FlatInput {
        let t = p.t_max();
        loop {
            let v = FlatInput::new(
                rng.random_range(-t..t),
                rng.random_range(-t..t),
                rng.random_range(-p.g()..t - p.g()),
            );
            if in_vc(&v, p, 0.0) && v.v3() > -p.g() {
                return v;
            }
        }
    }

    #[test]
    fn construction_rejects_infeasible_hover() {
        let err = ConstraintParams::new(G, G, 0.1, 0.1).unwrap_err();
        assert!(err.to_string().contains("infeasible hover"));
        assert!(ConstraintParams::new(G, 0.5 * G, 0.1, 0.1).is_err());
        assert!(ConstraintParams::new(G, 2.0 * G, 0.0, 0.1).is_err());
        assert!(ConstraintParams::new(G, 2.0 * G, 0.1, FRAC_PI_2).is_err());
        let p = ConstraintParams::new(G, 2.0 * G, 0.3, 0.2).unwrap();
        assert_eq!(p.eps_max(), 0.2);
    }

    #[test]
    fn input_box_membership() {
        let p = ConstraintParams::table_one();
        assert!(in_u(&PhysicalInput::hover(G), &p, 0.0));
        assert!(!in_u(
            &PhysicalInput::new(1.46 * G, 0.0, 0.0),
            &p,
            tol::INPUT_BOX
        ));
        assert!(in_u(
            &PhysicalInput::new(1.45 * G, 0.1745, -0.1745),
            &p,
            tol::INPUT_BOX
        ));
        assert!(!in_u(&PhysicalInput::new(G, 0.0, 0.18), &p, tol::INPUT_BOX));
        assert!(!in_u(
            &PhysicalInput::new(-0.1, 0.0, 0.0),
            &p,
            tol::INPUT_BOX
        ));
    }

    #[test]
    fn flat_set_membership_examples() {
        let p = ConstraintParams::table_one();
        assert!(in_vc(&FlatInput::zero(), &p, tol::MEMBERSHIP));
        assert!(in_vc(
            &FlatInput::new(0.0, 0.0, p.t_max() - G),
            &p,
            tol::MEMBERSHIP
        ));
        let edge = G * p.eps_max().tan();
        assert!(in_vc(
            &FlatInput::new(edge - 1e-3, 0.0, 0.0),
            &p,
            tol::MEMBERSHIP
        ));
        assert!(!in_vc(
            &FlatInput::new(edge + 1e-3, 0.0, 0.0),
            &p,
            tol::MEMBERSHIP
        ));
        assert!(!in_vc(
            &FlatInput::new(0.0, 0.0, -G - 1e-3),
            &p,
            tol::MEMBERSHIP
        ));
    }

    #[test]
    fn tilt_angle_examples() {
        assert_eq!(
            epsilon_angle(&FlatInput::new(0.0, 0.0, 3.0), G).unwrap(),
            0.0
        );
        assert_eq!(
            epsilon_angle(&FlatInput::new(0.0, 0.0, -9.0), G).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            epsilon_angle(&FlatInput::new(G, 0.0, 0.0), G).unwrap(),
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-15
        );
        assert!(epsilon_angle(&FlatInput::new(1.0, 0.0, -G), G).is_err());
    }

    #[test]
    fn cone_clause_matches_tilt_angle() {
        let p = ConstraintParams::table_one();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let v = FlatInput::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-G + 0.5..10.0),
            );
            let cone_ok = vc_clauses(&v, &p)[1] <= 0.0;
            let eps = epsilon_angle(&v, G).unwrap();
            if (eps - p.eps_max()).abs() > 1e-9 {
                assert_eq!(cone_ok, eps <= p.eps_max(), "v = {:?}", v.0);
            }
        }
    }

    #[test]
    fn inscribed_ball_table_one() {
        let ball = max_inscribed_ball(&ConstraintParams::table_one());
        assert_abs_diff_eq!(ball.rho, 2.9019, epsilon = 1e-3);
    }

    #[test]
    fn inscribed_ball_sphere_and_cone_tie() {
        let p = ConstraintParams::new(G, 2.0 * G, FRAC_PI_2 - 1e-6, FRAC_PI_2 - 1e-6).unwrap();
        let ball = max_inscribed_ball(&p);
        assert_abs_diff_eq!(ball.rho, G * G, epsilon = 1e-9);
    }

    #[test]
    fn inscribed_ball_agrees_with_ray_bisection() {
        for p in [
            ConstraintParams::table_one(),
            ConstraintParams::new(G, 1.1 * G, 0.5, 0.6).unwrap(),
            ConstraintParams::new(3.7, 9.0, 0.3, 1.2).unwrap(),
        ] {
            let closed = max_inscribed_ball(&p).rho;
            let numeric = inscribed_ball_by_rays(|v| in_vc(v, &p, 0.0), 20_000, 50.0, 60);
            // the spiral misses the exact touching direction by O(1/n)
            assert!(numeric >= closed * (1.0 - 1e-12), "{numeric} < {closed}");
            assert!((numeric - closed) / closed < 1e-3, "{numeric} vs {closed}");
        }
    }

    #[test]
    fn inscribed_ball_is_contained_and_maximal() {
        let p = ConstraintParams::table_one();
        let rho = max_inscribed_ball(&p).rho;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let d = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if d.norm() < 1e-3 {
                continue;
            }
            let r = rho.sqrt() * rng.random::<f64>().cbrt();
            let v = FlatInput(d.normalize() * r);
            assert!(in_vc(&v, &p, tol::MEMBERSHIP), "v = {:?}", v.0);
        }
        // The ball touches the cone near the horizontal plane; a slightly
        // larger ball pokes out there.
        for scale in [1.05, 1.0005] {
            let r = (rho * scale * scale).sqrt();
            let violations = (0..1000)
                .map(|i| {
                    let ang = i as f64 * std::f64::consts::TAU / 1000.0;
                    let z = -p.eps_max().sin();
                    let lat = (1.0 - z * z).sqrt();
                    FlatInput::new(r * lat * ang.cos(), r * lat * ang.sin(), r * z)
                })
                .filter(|v| !in_vc(v, &p, tol::MEMBERSHIP))
                .count();
            assert!(violations > 0, "scale {scale}");
        }
    }

    #[test]
    fn flat_set_maps_into_input_box() {
        let p = ConstraintParams::table_one();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psis: Vec<f64> = (0..10).map(|_| rng.random_range(-3.2..3.2)).collect();
        for _ in 0..100_000 {
            let v = random_in_vc(&mut rng, &p);
            for &psi in &psis {
                let u = to_physical(&v, psi, G).unwrap();
                assert!(in_u(&u, &p, tol::INPUT_BOX), "v = {:?}, psi = {psi}", v.0);
            }
        }
    }

    #[test]
    fn flat_set_is_convex() {
        let p = ConstraintParams::table_one();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let a = random_in_vc(&mut rng, &p);
            let b = random_in_vc(&mut rng, &p);
            let l: f64 = rng.random();
            let mid = FlatInput(a.0 * l + b.0 * (1.0 - l));
            assert!(in_vc(&mid, &p, tol::MEMBERSHIP));
        }
    }

    fn in_v(v: &FlatInput, psi: f64, p: &ConstraintParams) -> bool {
        to_physical(v, psi, p.g())
            .map(|u| in_u(&u, p, tol::INPUT_BOX))
            .unwrap_or(false)
    }

    #[test]
    fn exact_flat_input_set_is_not_convex() {
        let p = ConstraintParams::table_one();
        for psi in [0.0, 0.4, -1.1] {
            // Extreme inputs with equal roll and opposite pitch: the midpoint
            // needs more roll than either endpoint.
            let plus = accel(
                &PhysicalInput::new(p.t_max(), p.phi_max(), p.theta_max()),
                psi,
                G,
            )
            .unwrap();
            let minus = accel(
                &PhysicalInput::new(p.t_max(), p.phi_max(), -p.theta_max()),
                psi,
                G,
            )
            .unwrap();
            let (a, b) = (FlatInput(plus), FlatInput(minus));
            assert!(in_v(&a, psi, &p) && in_v(&b, psi, &p));
            let mid = FlatInput((plus + minus) * 0.5);
            assert!(!in_v(&mid, psi, &p), "psi = {psi}");
            let u = to_physical(&mid, psi, G).unwrap();
            assert!(u.roll.abs() > p.phi_max());

            // Fully mirrored extremes (both angles flipped) average to a
            // vertical command, which stays feasible.
            let mirrored = accel(
                &PhysicalInput::new(p.t_max(), -p.phi_max(), -p.theta_max()),
                psi,
                G,
            )
            .unwrap();
            assert!(in_v(&FlatInput((plus + mirrored) * 0.5), psi, &p));
        }
    }
}
