//! Ray saturation onto the convex flat input set.
//!
//! A command `v` outside `V_c` is scaled to `lambda* v` with
//! `lambda* = max { lambda : lambda v in V_c }`. Because `V_c` is convex and
//! contains the origin in its interior, the feasible scales along the ray form
//! an interval `[0, lambda*]`, and `lambda*` solves one of the clause equalities.
//! The KKT conditions leave a finite candidate list (at most six reals): the
//! plane crossing, the ball/cone rim, and the roots of one quadratic per
//! curved clause. The explicit operator evaluates those candidates; a
//! bisection on the membership predicate serves as an independent oracle.

use std::fmt;
use std::str::FromStr;

use arrayvec::ArrayVec;

use crate::constraints::{in_vc, vc_clauses, ConstraintParams};
use crate::error::{Error, Result};
use crate::flat_model::FlatInput;
use crate::tol;

/// Which clause of `V_c` the saturated output lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActiveConstraint {
    None,
    Ball,
    Cone,
    HalfSpace,
}

impl ActiveConstraint {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActiveConstraint::None => "none",
            ActiveConstraint::Ball => "ball",
            ActiveConstraint::Cone => "cone",
            ActiveConstraint::HalfSpace => "halfspace",
        }
    }
}

impl fmt::Display for ActiveConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActiveConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ActiveConstraint::None),
            "ball" => Ok(ActiveConstraint::Ball),
            "cone" => Ok(ActiveConstraint::Cone),
            "halfspace" => Ok(ActiveConstraint::HalfSpace),
            other => Err(Error::InvalidParams(format!(
                "unknown constraint '{other}'"
            ))),
        }
    }
}

/// Which stationarity condition produced a candidate scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    /// `lambda v3 = -g`
    HalfSpace,
    /// `T_max / (v3 sqrt(1 + tan^2 eps_max))`, the ball/cone rim term
    Rim,
    /// roots of the cone quadratic
    Cone,
    /// roots of the ball quadratic
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub lambda: f64,
    pub source: CandidateSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationResult {
    pub v_out: FlatInput,
    pub lambda: f64,
    pub saturated: bool,
    pub active: ActiveConstraint,
}

impl SaturationResult {
    fn unsaturated(v: FlatInput) -> Self {
        Self {
            v_out: v,
            lambda: 1.0,
            saturated: false,
            active: ActiveConstraint::None,
        }
    }
}

/// Real roots of `a x^2 + b x + c`, computed without cancellation.
/// A vanishing leading coefficient degrades to the linear root.
fn quadratic_roots(a: f64, b: f64, c: f64) -> ArrayVec<f64, 2> {
    let mut roots = ArrayVec::new();
    if a == 0.0 {
        if b != 0.0 {
            roots.push(-c / b);
        }
        return roots;
    }
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // rounding at a double root
        if disc > -8.0 * f64::EPSILON * b * b {
            disc = 0.0;
        } else {
            return roots;
        }
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        roots.push(0.0);
        return roots;
    }
    roots.push(q / a);
    roots.push(c / q);
    roots
}

/// Real members of the KKT candidate set for the scale along the ray through `v`.
///
/// Entries whose closed form divides by zero (`v3 = 0` for the first two) are
/// skipped. For `v3 = 0` the cone quadratic reduces to the tangency condition
/// `lambda |(v1, v2)| = g tan(eps_max)` and needs no special casing; when its
/// leading coefficient vanishes the linear root `-c1 / b1` is used.
pub fn candidate_set(v: &FlatInput, p: &ConstraintParams) -> Result<ArrayVec<Candidate, 6>> {
    if v.norm_squared() == 0.0 {
        return Err(Error::Domain("saturation ray undefined for v = 0".into()));
    }
    if !v.is_finite() {
        return Err(Error::Domain(format!("non-finite command {:?}", v.0)));
    }
    let g = p.g();
    let t_max = p.t_max();
    let tan2 = p.tan_eps_max_sq();
    let (v1, v2, v3) = (v.v1(), v.v2(), v.v3());
    let lateral = v1 * v1 + v2 * v2;

    let mut out = ArrayVec::new();
    let mut push = |lambda: f64, source| {
        if lambda.is_finite() {
            out.push(Candidate { lambda, source });
        }
    };

    if v3 != 0.0 {
        push(-g / v3, CandidateSource::HalfSpace);
        push(t_max / (v3 * (1.0 + tan2).sqrt()), CandidateSource::Rim);
    }

    let a1 = lateral - v3 * v3 * tan2;
    let b1 = -2.0 * tan2 * v3 * g;
    let c1 = -tan2 * g * g;
    for root in quadratic_roots(a1, b1, c1) {
        push(root, CandidateSource::Cone);
    }

    let a2 = lateral + v3 * v3;
    let b2 = 2.0 * v3 * g;
    let c2 = g * g - t_max * t_max;
    for root in quadratic_roots(a2, b2, c2) {
        push(root, CandidateSource::Ball);
    }

    Ok(out)
}

/// Explicit saturation: `v` itself if it lies in `V_c`, otherwise `lambda* v`
/// with `lambda*` the largest candidate in `(0, 1)` whose scaled command is
/// feasible.
pub fn saturate(v: &FlatInput, p: &ConstraintParams) -> SaturationResult {
    if in_vc(v, p, tol::MEMBERSHIP) {
        return SaturationResult::unsaturated(*v);
    }
    let lambda = match candidate_set(v, p) {
        Ok(cands) => cands
            .iter()
            .map(|c| c.lambda)
            .filter(|&l| l > 0.0 && l < 1.0 && in_vc(&(*v * l), p, tol::MEMBERSHIP))
            .fold(None, |best: Option<f64>, l| {
                Some(best.map_or(l, |b| b.max(l)))
            }),
        Err(_) => None,
    };
    // Non-finite commands have no candidates; the bisection still returns a
    // feasible (possibly zero) scale for them.
    let lambda = lambda.unwrap_or_else(|| saturate_oracle(v, p, 60));
    let v_out = *v * lambda;
    SaturationResult {
        v_out,
        lambda,
        saturated: true,
        active: classify_active(v, lambda, p),
    }
}

/// Clause values of `V_c` at `v`, normalized by `T_max^2` (curved clauses) and
/// `T_max` (plane): the relative tightness used to report active clauses.
pub fn clause_residuals(v: &FlatInput, p: &ConstraintParams) -> [f64; 3] {
    let [ball, cone, half] = vc_clauses(v, p);
    let t = p.t_max();
    [ball.abs() / (t * t), cone.abs() / (t * t), half.abs() / t]
}

/// Picks the clause the ray leaves `V_c` through at scale `lambda`.
///
/// A clause only counts when it is tight and increasing along the ray; at the
/// cone apex the cone clause is tight but stays satisfied beyond it. Among
/// tight crossing clauses the order is ball, cone, half-space.
fn classify_active(v: &FlatInput, lambda: f64, p: &ConstraintParams) -> ActiveConstraint {
    const ORDER: [ActiveConstraint; 3] = [
        ActiveConstraint::Ball,
        ActiveConstraint::Cone,
        ActiveConstraint::HalfSpace,
    ];
    let g = p.g();
    let tan2 = p.tan_eps_max_sq();
    let (v1, v2, v3) = (v.v1(), v.v2(), v.v3());
    let lateral = v1 * v1 + v2 * v2;
    let slopes = [
        2.0 * lambda * (lateral + v3 * v3) + 2.0 * v3 * g,
        2.0 * lambda * (lateral - v3 * v3 * tan2) - 2.0 * tan2 * v3 * g,
        -v3,
    ];
    let residuals = clause_residuals(&(*v * lambda), p);

    let crossing = |i: usize| slopes[i] > 0.0;
    if let Some(i) = (0..3).find(|&i| crossing(i) && residuals[i] <= tol::ALGEBRAIC) {
        return ORDER[i];
    }
    let argmin = |it: &mut dyn Iterator<Item = usize>| {
        it.min_by(|&a, &b| residuals[a].total_cmp(&residuals[b]))
    };
    argmin(&mut (0..3).filter(|&i| crossing(i)))
        .or_else(|| argmin(&mut (0..3)))
        .map(|i| ORDER[i])
        .unwrap_or(ActiveConstraint::None)
}

/// Bisection for `lambda*` on the monotone predicate `lambda v in V_c`
/// (zero slack), accurate to `2^-iters`. Returns 1 for feasible `v`.
pub fn saturate_oracle(v: &FlatInput, p: &ConstraintParams, iters: u32) -> f64 {
    if in_vc(v, p, 0.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if in_vc(&(*v * mid), p, 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const G: f64 = 9.81;

    fn table() -> ConstraintParams {
        ConstraintParams::table_one()
    }

    #[test]
    fn stable_quadratic_roots() {
        let r = quadratic_roots(1.0, -3.0, 2.0);
        assert_eq!(r.len(), 2);
        assert!(r.contains(&1.0) && r.contains(&2.0));
        assert!(quadratic_roots(1.0, 0.0, 1.0).is_empty());
        assert_eq!(quadratic_roots(0.0, 2.0, -1.0).as_slice(), &[0.5]);
        assert!(quadratic_roots(0.0, 0.0, 1.0).is_empty());
        // tiny root survives cancellation
        let r = quadratic_roots(1.0, 1e8, 1.0);
        assert!(r.iter().any(|&x| (x + 1e-8).abs() < 1e-20));
    }

    #[test]
    fn candidates_reject_zero_ray() {
        assert!(matches!(
            candidate_set(&FlatInput::zero(), &table()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn plane_candidate_for_downward_ray() {
        let cands = candidate_set(&FlatInput::new(0.0, 0.0, -2.0 * G), &table()).unwrap();
        assert!(cands
            .iter()
            .any(|c| c.source == CandidateSource::HalfSpace && (c.lambda - 0.5).abs() < 1e-15));
    }

    #[test]
    fn horizontal_ray_candidates() {
        let p = table();
        let c = 7.0;
        let cands = candidate_set(&FlatInput::new(c, 0.0, 0.0), &p).unwrap();
        assert!(cands
            .iter()
            .all(|k| !matches!(k.source, CandidateSource::HalfSpace | CandidateSource::Rim)));
        let ball = (p.t_max().powi(2) - G * G).sqrt() / c;
        let cone = G * p.eps_max().tan() / c;
        let has = |src, val: f64| {
            cands
                .iter()
                .any(|k| k.source == src && (k.lambda - val).abs() < 1e-12)
        };
        assert!(has(CandidateSource::Ball, ball) && has(CandidateSource::Ball, -ball));
        assert!(has(CandidateSource::Cone, cone) && has(CandidateSource::Cone, -cone));
    }

    #[test]
    fn degenerate_cone_quadratic_uses_linear_root() {
        let p = table();
        // a1 = 0: lateral = v3^2 tan^2
        let v3 = 3.0;
        let v = FlatInput::new(v3 * p.eps_max().tan(), 0.0, v3);
        let cands = candidate_set(&v, &p).unwrap();
        let cone: Vec<_> = cands
            .iter()
            .filter(|k| k.source == CandidateSource::Cone)
            .collect();
        assert!(!cone.is_empty());
    }

    #[test]
    fn saturates_through_half_space() {
        let r = saturate(&FlatInput::new(0.0, 0.0, -2.0 * G), &table());
        assert!(r.saturated);
        assert_abs_diff_eq!(r.lambda, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.v_out.v3(), -G, epsilon = 1e-12);
        assert_eq!(r.active, ActiveConstraint::HalfSpace);
        assert!(in_vc(&r.v_out, &table(), tol::MEMBERSHIP));
    }

    #[test]
    fn saturates_through_ball() {
        let p = table();
        let top = p.t_max() - G;
        let r = saturate(&FlatInput::new(0.0, 0.0, 2.0 * top), &p);
        assert_abs_diff_eq!(r.lambda, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.v_out.v3(), top, epsilon = 1e-12);
        assert_eq!(r.active, ActiveConstraint::Ball);
    }

    #[test]
    fn saturates_through_cone() {
        let p = table();
        let edge = G * p.eps_max().tan();
        let r = saturate(&FlatInput::new(2.0 * edge, 0.0, 0.0), &p);
        assert_abs_diff_eq!(r.lambda, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.v_out.v1(), 1.7298, epsilon = 1e-3);
        assert_eq!(r.active, ActiveConstraint::Cone);
    }

    #[test]
    fn feasible_commands_pass_through() {
        let p = table();
        for v in [
            FlatInput::zero(),
            FlatInput::new(0.5, -0.3, 1.0),
            FlatInput::new(0.0, 0.0, p.t_max() - G),
        ] {
            let r = saturate(&v, &p);
            assert!(!r.saturated);
            assert_eq!(r.lambda, 1.0);
            assert_eq!(r.v_out, v);
            assert_eq!(r.active, ActiveConstraint::None);
        }
    }

    #[test]
    fn oracle_examples() {
        let p = table();
        assert_abs_diff_eq!(
            saturate_oracle(&FlatInput::new(0.0, 0.0, -2.0 * G), &p, 40),
            0.5,
            epsilon = 1e-12
        );
        let boundary = FlatInput::new(0.0, 0.0, p.t_max() - G);
        assert_abs_diff_eq!(
            saturate_oracle(&(boundary * 2.0), &p, 50),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn non_finite_command_falls_back_to_feasible_output() {
        let r = saturate(&FlatInput::new(f64::INFINITY, 0.0, 0.0), &table());
        assert!(r.saturated);
    }

    fn command() -> impl Strategy<Value = FlatInput> {
        prop::array::uniform3(-60.0..60.0f64).prop_map(|a| FlatInput::new(a[0], a[1], a[2]))
    }

    proptest! {
        #[test]
        fn output_is_feasible_and_on_boundary(v in command()) {
            let p = table();
            let r = saturate(&v, &p);
            prop_assert!(in_vc(&r.v_out, &p, tol::MEMBERSHIP));
            prop_assert_eq!(r.saturated, !in_vc(&v, &p, tol::MEMBERSHIP));
            prop_assert_eq!(r.saturated, r.lambda < 1.0);
            if r.saturated {
                let res = clause_residuals(&r.v_out, &p);
                let idx = match r.active {
                    ActiveConstraint::Ball => 0,
                    ActiveConstraint::Cone => 1,
                    ActiveConstraint::HalfSpace => 2,
                    ActiveConstraint::None => unreachable!(),
                };
                prop_assert!(res[idx] <= tol::ACTIVE_CLAUSE, "{:?} {:?}", r, res);
            }
        }

        #[test]
        fn saturation_is_idempotent(v in command()) {
            let p = table();
            let once = saturate(&v, &p);
            let twice = saturate(&once.v_out, &p);
            prop_assert!(!twice.saturated);
        }

        #[test]
        fn scaling_an_infeasible_ray_keeps_exit_point(v in command(), k in 1.0..50.0f64) {
            let p = table();
            prop_assume!(!in_vc(&v, &p, tol::MEMBERSHIP));
            let a = saturate(&v, &p).v_out;
            let b = saturate(&(v * k), &p).v_out;
            prop_assert!((a.0 - b.0).amax() <= 1e-9);
        }

        #[test]
        fn agrees_with_bisection(v in command()) {
            let p = table();
            let r = saturate(&v, &p);
            let oracle = saturate_oracle(&v, &p, 60);
            prop_assert!((r.lambda - oracle).abs() <= 1e-8, "{} vs {}", r.lambda, oracle);
        }
    }
}
