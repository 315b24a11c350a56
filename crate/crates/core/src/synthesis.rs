//! Offline synthesis of the invariant-ellipsoid certificate.
//!
//! Three steps: take the largest ball `B(rho)` inside `V_c`; find `P > 0` with
//! `(A - B B'P)'P + P(A - B B'P) <= -alpha P`; take the largest level `eps`
//! such that `xi'P xi <= eps` implies `|B'P xi|^2 <= rho`. Any gain scale
//! `gamma >= 1` then keeps `{xi'P xi <= eps}` invariant under the saturated
//! gradient controller `sat(-gamma B'P xi)`.
//!
//! `A` and `B` are three identical double integrators, so every matrix here
//! is `P_axis (x) I_3` for a 2x2 `P_axis = [[p1, p2], [p2, p3]]`. Synthesis
//! works on the 2x2 problem and every result is re-checked on the dense 6x6
//! (or 7x7) matrices.

use nalgebra::{Matrix2, Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constraints::{max_inscribed_ball, ConstraintParams};
use crate::error::{Error, Result};
use crate::flat_model::{a_matrix, b_matrix, flat_dynamics, FlatInput, FlatState};
use crate::linalg::{golden_max, max_eigenvalue, min_eigenvalue};
use crate::saturation::saturate;
use crate::tol;

/// Block-structured Lyapunov matrix `P = [[p1 I, p2 I], [p2 I, p3 I]]` and the
/// decay rate it was built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMatrix {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub alpha: f64,
}

impl GainMatrix {
    /// Validates `P > 0` and `alpha > 0`; the decay condition is not checked here
    /// (see [`GainMatrix::lyapunov_residual`]).
    pub fn new(p1: f64, p2: f64, p3: f64, alpha: f64) -> Result<Self> {
        if ![p1, p2, p3, alpha].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParams("non-finite gain entries".into()));
        }
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "alpha = {alpha} must be positive"
            )));
        }
        if !(p1 > 0.0 && p1 * p3 - p2 * p2 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "P is not positive definite: (p1, p2, p3) = ({p1}, {p2}, {p3})"
            )));
        }
        Ok(Self { p1, p2, p3, alpha })
    }

    pub fn axis(&self) -> Matrix2<f64> {
        Matrix2::new(self.p1, self.p2, self.p2, self.p3)
    }

    pub fn full(&self) -> Matrix6<f64> {
        kron_identity(&self.axis())
    }

    /// `(A - B B'P)'P + P(A - B B'P) + alpha P`, dense.
    pub fn lyapunov_residual_matrix(&self) -> Matrix6<f64> {
        let p = self.full();
        let b = b_matrix();
        let closed = a_matrix() - b * b.transpose() * p;
        closed.transpose() * p + p * closed + p * self.alpha
    }

    /// Largest eigenvalue of the decay residual; `<= 0` means the decay
    /// condition holds.
    pub fn lyapunov_residual(&self) -> f64 {
        max_eigenvalue(&self.lyapunov_residual_matrix())
    }

    /// `B'P e`, which for this structure is `p2 pos + p3 vel`.
    #[inline]
    pub fn bt_p(&self, e: &FlatState) -> Vector3<f64> {
        e.pos * self.p2 + e.vel * self.p3
    }

    /// `e'P e`.
    #[inline]
    pub fn quad_form(&self, e: &FlatState) -> f64 {
        self.p1 * e.pos.norm_squared()
            + 2.0 * self.p2 * e.pos.dot(&e.vel)
            + self.p3 * e.vel.norm_squared()
    }

    /// Nominal gradient command `-gamma B'P e`.
    #[inline]
    pub fn gradient_command(&self, gamma: f64, e: &FlatState) -> FlatInput {
        FlatInput(self.bt_p(e) * -gamma)
    }

    /// Area of the projection of `{xi'P xi <= eps}` onto one `(position, velocity)`
    /// plane: `pi eps / sqrt(det P_axis)`.
    pub fn projected_area(&self, eps: f64) -> f64 {
        std::f64::consts::PI * eps / (self.p1 * self.p3 - self.p2 * self.p2).sqrt()
    }
}

/// `M (x) I_3`, reordered to the `[pos; vel]` layout.
fn kron_identity(m: &Matrix2<f64>) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    for (bi, bj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        out.fixed_view_mut::<3, 3>(3 * bi, 3 * bj)
            .copy_from(&(Matrix3::identity() * m[(bi, bj)]));
    }
    out
}

/// Per-axis form of `Q A' + A Q - 2 B B' + alpha Q` for `Q = [[q1, q2], [q2, q3]]`.
pub fn axis_lmi(q1: f64, q2: f64, q3: f64, alpha: f64) -> Matrix2<f64> {
    Matrix2::new(
        2.0 * q2 + alpha * q1,
        q3 + alpha * q2,
        q3 + alpha * q2,
        -2.0 + alpha * q3,
    )
}

/// Stabilizing `P = Q^-1` with `Q A' + A Q - 2 B B' <= -alpha Q - margin I`, `Q > 0`.
///
/// Among feasible `Q` this picks the largest `q3`. The (2,2) entry of the
/// per-axis LMI is `alpha q3 - 2 <= -margin`, which caps `q3` at
/// `(2 - margin) / alpha`. At the cap the off-diagonal must vanish, giving
/// `q2 = -q3 / alpha`, and tightness of the (1,1) entry gives
/// `q1 = -(margin + 2 q2) / alpha`. Then `Q > 0` iff `q3 > margin alpha`, i.e.
/// the problem is feasible iff `margin < 2 / (1 + alpha^2)`. With `margin = 0`
/// this yields `P_axis = [[alpha^3/2, alpha^2/2], [alpha^2/2, alpha]]`.
///
/// The assembled 6x6 matrices are re-checked densely before returning.
pub fn solve_stabilizing_p(alpha: f64, margin: f64) -> Result<GainMatrix> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Synthesis(format!(
            "alpha = {alpha} must be positive"
        )));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::Synthesis(format!(
            "margin = {margin} must be non-negative"
        )));
    }
    if margin * (1.0 + alpha * alpha) >= 2.0 {
        return Err(Error::Synthesis(format!(
            "no Q > 0 satisfies the decay LMI with margin {margin} at alpha {alpha} \
             (need margin < {})",
            2.0 / (1.0 + alpha * alpha)
        )));
    }
    let q3 = (2.0 - margin) / alpha;
    let q2 = -q3 / alpha;
    let q1 = -(margin + 2.0 * q2) / alpha;
    let q = Matrix2::new(q1, q2, q2, q3);
    let p_axis = q
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("singular Q".into()))?;
    let gain = GainMatrix::new(
        p_axis[(0, 0)],
        0.5 * (p_axis[(0, 1)] + p_axis[(1, 0)]),
        p_axis[(1, 1)],
        alpha,
    )
    .map_err(|e| Error::Synthesis(e.to_string()))?;

    // dense re-verification of the Q-side LMI and of the decay condition on P
    let q_full = kron_identity(&q);
    let a = a_matrix();
    let b = b_matrix();
    let q_lmi = q_full * a.transpose() + a * q_full - b * b.transpose() * 2.0 + q_full * alpha;
    let q_top = max_eigenvalue(&q_lmi);
    if q_top > -margin + tol::ALGEBRAIC {
        return Err(Error::Synthesis(format!(
            "Q-side LMI check failed: lambda_max = {q_top:e}, required <= {:e}",
            -margin
        )));
    }
    if min_eigenvalue(&q_full) <= 0.0 {
        return Err(Error::Synthesis("Q is not positive definite".into()));
    }
    let residual = gain.lyapunov_residual();
    if residual > tol::CERTIFICATE {
        return Err(Error::Synthesis(format!(
            "decay residual {residual:e} exceeds {:e}",
            tol::CERTIFICATE
        )));
    }
    Ok(gain)
}

/// Result of checking an externally supplied `P` against the decay condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCheck {
    pub positive_definite: bool,
    pub residual: f64,
}

impl LyapunovCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.positive_definite && self.residual <= tolerance
    }
}

/// Verify-only mode: evaluates `P > 0` and the decay residual for given entries.
pub fn check_stabilizing_p(p1: f64, p2: f64, p3: f64, alpha: f64) -> LyapunovCheck {
    let gain = GainMatrix { p1, p2, p3, alpha };
    LyapunovCheck {
        positive_definite: min_eigenvalue(&gain.full()) > 0.0,
        residual: gain.lyapunov_residual(),
    }
}

/// Largest invariant level and its S-procedure multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantLevel {
    pub eps: f64,
    pub tau: f64,
}

/// Largest `eps` with `xi'P xi <= eps  =>  |B'P xi|^2 <= rho`.
///
/// The S-procedure matrix is block diagonal: `P - tau P B B'P >= 0`, which after
/// congruence with `P^-1/2` reads `tau lambda_max(B'P B) <= 1`, and
/// `tau rho - eps >= 0`. Hence `eps* = rho / lambda_max(B'P B)` with
/// `tau = 1 / lambda_max(B'P B)`. For this `P`, `B'P B = p3 I`.
pub fn eps_max(gain: &GainMatrix, rho: f64) -> InvariantLevel {
    let b = b_matrix();
    let btpb: Matrix3<f64> = b.transpose() * gain.full() * b;
    let top = max_eigenvalue(&btpb);
    InvariantLevel {
        eps: rho / top,
        tau: 1.0 / top,
    }
}

/// `[[P, 0], [0, -eps]] - tau [[P B B'P, 0], [0, -rho]]`.
pub fn s_procedure_matrix(gain: &GainMatrix, rho: f64, eps: f64, tau: f64) -> SMatrix<f64, 7, 7> {
    let p = gain.full();
    let b = b_matrix();
    let pbbp = p * b * b.transpose() * p;
    let mut m = SMatrix::<f64, 7, 7>::zeros();
    m.fixed_view_mut::<6, 6>(0, 0).copy_from(&(p - pbbp * tau));
    m[(6, 6)] = -eps + tau * rho;
    m
}

/// `max over tau >= 0` of the smallest eigenvalue of the S-procedure matrix.
/// Non-negative iff the implication holds at level `eps`.
pub fn s_procedure_slack(gain: &GainMatrix, rho: f64, eps: f64) -> (f64, f64) {
    let f = |tau: f64| min_eigenvalue(&s_procedure_matrix(gain, rho, eps, tau));
    let hi = 4.0 / gain.p3.min(gain.p1).max(1e-12);
    golden_max(f, 0.0, hi, 200)
}

/// Invariant-ellipsoid certificate: constraints, gain, ball, level and gain scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidCert {
    pub params: ConstraintParams,
    pub gain: GainMatrix,
    pub rho: f64,
    pub eps: f64,
    pub tau: f64,
    pub gamma: f64,
    /// LMI margin used to synthesize the gain.
    pub synthesis_margin: f64,
    /// Allowed decay residual when the certificate is checked.
    pub certificate_tolerance: f64,
    /// Seed for boundary sampling.
    pub seed: u64,
}

impl EllipsoidCert {
    /// `xi'P xi <= eps`.
    pub fn contains(&self, xi: &FlatState, slack: f64) -> bool {
        self.gain.quad_form(xi) <= self.eps * (1.0 + slack)
    }
}

/// Full offline synthesis: inscribed ball, stabilizing gain, invariant level.
pub fn run_procedure(
    params: &ConstraintParams,
    alpha: f64,
    gamma: f64,
    margin: f64,
) -> Result<EllipsoidCert> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "gamma = {gamma} must be >= 1"
        )));
    }
    let ball = max_inscribed_ball(params);
    let gain = solve_stabilizing_p(alpha, margin)?;
    let level = eps_max(&gain, ball.rho);
    Ok(EllipsoidCert {
        params: *params,
        gain,
        rho: ball.rho,
        eps: level.eps,
        tau: level.tau,
        gamma,
        synthesis_margin: margin,
        certificate_tolerance: tol::CERTIFICATE,
        seed: 0,
    })
}

/// One row of a decay-rate sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub gain: GainMatrix,
    pub eps: f64,
    pub projected_area: f64,
}

pub fn alpha_sweep(
    params: &ConstraintParams,
    alphas: &[f64],
    margin: f64,
) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let cert = run_procedure(params, alpha, 1.0, margin)?;
            Ok(SweepRow {
                alpha,
                gain: cert.gain,
                eps: cert.eps,
                projected_area: cert.gain.projected_area(cert.eps),
            })
        })
        .collect()
}

/// Maps a direction `z` (any nonzero 6-vector) to `sqrt(eps) P^-1/2 z/|z|` on
/// the ellipsoid boundary.
pub struct BoundaryMap {
    inv_sqrt: Matrix6<f64>,
    scale: f64,
}

impl BoundaryMap {
    pub fn new(gain: &GainMatrix, eps: f64) -> Self {
        let eig = gain.full().symmetric_eigen();
        let d = Matrix6::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        Self {
            inv_sqrt: eig.eigenvectors * d * eig.eigenvectors.transpose(),
            scale: eps.sqrt(),
        }
    }

    pub fn map(&self, z: &Vector6<f64>) -> FlatState {
        FlatState::from_vector(&(self.inv_sqrt * z.normalize() * self.scale))
    }
}

/// `n` deterministic boundary points: Halton points in bases 2..13 turned into
/// Gaussian directions by Box-Muller, then mapped onto the ellipsoid boundary.
pub fn boundary_starts(gain: &GainMatrix, eps: f64, n: usize) -> Vec<FlatState> {
    const BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];
    let map = BoundaryMap::new(gain, eps);
    (1..=n as u64)
        .map(|i| {
            let u: Vec<f64> = BASES.iter().map(|&b| radical_inverse(i, b)).collect();
            let mut z = Vector6::zeros();
            for k in 0..3 {
                let r = (-2.0 * u[2 * k].ln()).sqrt();
                let ang = std::f64::consts::TAU * u[2 * k + 1];
                z[2 * k] = r * ang.cos();
                z[2 * k + 1] = r * ang.sin();
            }
            map.map(&z)
        })
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Location and value of the worst violation found by [`verify_cert`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorstSample {
    pub index: usize,
    pub check: &'static str,
    pub xi: [f64; 6],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub seed: u64,
    pub n_samples: usize,
    pub saturated_samples: usize,
    pub nagumo_failures: usize,
    pub decay_failures: usize,
    pub gain_scale_failures: usize,
    /// Largest `xi'P(A xi + B v)` over the samples; must be `<= 0`.
    pub worst_nagumo: f64,
    /// Largest `V' + alpha V`.
    pub worst_decay: f64,
    /// Smallest `gamma lambda*` among saturated samples (1 when none saturate).
    pub worst_gain_scale: f64,
    pub worst_sample: Option<WorstSample>,
    /// `eps <= rho / lambda_max(B'P B)`.
    pub level_within_bound: bool,
    pub lyapunov_residual: f64,
}

impl VerificationReport {
    pub fn failures(&self) -> usize {
        self.nagumo_failures + self.decay_failures + self.gain_scale_failures
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0 && self.level_within_bound
    }
}

const NAGUMO_SLACK: f64 = 1e-9;
const DECAY_SLACK: f64 = 1e-6;
const GAIN_SCALE_SLACK: f64 = 1e-9;

/// Samples the certificate's ellipsoid boundary and checks, at each sample
/// `xi_b` with `v = sat(-gamma B'P xi_b)`:
///
/// 1. inward flow, `xi_b'P(A xi_b + B v) <= 0`;
/// 2. decay, `V' <= -alpha V`;
/// 3. when saturated, `gamma lambda* >= 1`.
///
/// All three up to small absolute slacks. Failures are counted, not raised.
pub fn verify_cert(cert: &EllipsoidCert, n_samples: usize, seed: u64) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = BoundaryMap::new(&cert.gain, cert.eps);
    let p = cert.gain.full();
    let alpha = cert.gain.alpha;

    let mut report = VerificationReport {
        seed,
        n_samples,
        saturated_samples: 0,
        nagumo_failures: 0,
        decay_failures: 0,
        gain_scale_failures: 0,
        worst_nagumo: f64::NEG_INFINITY,
        worst_decay: f64::NEG_INFINITY,
        worst_gain_scale: 1.0,
        worst_sample: None,
        level_within_bound: {
            let bound = eps_max(&cert.gain, cert.rho).eps;
            cert.eps <= bound * (1.0 + tol::ALGEBRAIC)
        },
        lyapunov_residual: cert.gain.lyapunov_residual(),
    };
    // normalized severity of the worst violation so far
    let mut worst_severity = 0.0;

    for index in 0..n_samples {
        let z = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let xi = map.map(&z);
        let sat = saturate(&cert.gain.gradient_command(cert.gamma, &xi), &cert.params);
        let v_dot_half = (p * xi.to_vector()).dot(&flat_dynamics(&xi, &sat.v_out));
        let value = cert.gain.quad_form(&xi);

        let mut flag = |check: &'static str, excess: f64, measured: f64| {
            if excess > worst_severity {
                worst_severity = excess;
                report.worst_sample = Some(WorstSample {
                    index,
                    check,
                    xi: xi.to_array(),
                    value: measured,
                });
            }
        };

        report.worst_nagumo = report.worst_nagumo.max(v_dot_half);
        if v_dot_half > NAGUMO_SLACK {
            report.nagumo_failures += 1;
            flag("nagumo", v_dot_half, v_dot_half);
        }
        let decay = 2.0 * v_dot_half + alpha * value;
        report.worst_decay = report.worst_decay.max(decay);
        if decay > DECAY_SLACK {
            report.decay_failures += 1;
            flag("decay", decay, decay);
        }
        if sat.saturated {
            report.saturated_samples += 1;
            let scale = cert.gamma * sat.lambda;
            report.worst_gain_scale = report.worst_gain_scale.min(scale);
            if scale < 1.0 - GAIN_SCALE_SLACK {
                report.gain_scale_failures += 1;
                flag("gain_scale", 1.0 - scale, scale);
            }
        }
    }
    report
}
