//! Closed-loop simulation: saturated flat-space controller, linearizing input
//! map and the nonlinear translational plant, integrated with fixed-step RK4.
//!
//! Each step: sample the reference, compute `v = sat(-gamma B'P (xi - xi_ref))`,
//! map it to `u = beta_psi(v)`, record monitors, then hold `u` over the step
//! and integrate the plant `pos'' = h_psi(u)`.

use std::io::{self, Write};
use std::time::Instant;

use nalgebra::{Vector3, Vector6};
use serde::Serialize;

use crate::constraints::{in_u, in_vc, u_margin, vc_clauses, ConstraintParams};
use crate::error::{Error, Result};
use crate::flat_model::{accel, to_physical, FlatInput, FlatState, PhysicalInput};
use crate::saturation::{saturate, ActiveConstraint, SaturationResult};
use crate::synthesis::EllipsoidCert;
use crate::tol;

/// Relative slack on the ellipsoid level for the invariance monitor.
pub const INVARIANCE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Origin,
    Setpoint(FlatState),
    /// `(cx + r cos(w t), cy + r sin(w t), altitude)`.
    Circular {
        radius: f64,
        center: [f64; 2],
        altitude: f64,
        omega: f64,
    },
}

/// How the velocity half of a time-varying reference state is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceVelocity {
    #[default]
    Analytic,
    Zero,
}

impl Reference {
    pub fn state(&self, t: f64, velocity: ReferenceVelocity) -> FlatState {
        match *self {
            Reference::Origin => FlatState::default(),
            Reference::Setpoint(s) => s,
            Reference::Circular {
                radius,
                center,
                altitude,
                omega,
            } => {
                let (s, c) = (omega * t).sin_cos();
                let pos = Vector3::new(center[0] + radius * c, center[1] + radius * s, altitude);
                let vel = match velocity {
                    ReferenceVelocity::Analytic => {
                        Vector3::new(-radius * omega * s, radius * omega * c, 0.0)
                    }
                    ReferenceVelocity::Zero => Vector3::zeros(),
                };
                FlatState::new(pos, vel)
            }
        }
    }

    /// Second derivative of the reference position (the feedforward term).
    pub fn accel(&self, t: f64) -> Vector3<f64> {
        match *self {
            Reference::Origin | Reference::Setpoint(_) => Vector3::zeros(),
            Reference::Circular { radius, omega, .. } => {
                let (s, c) = (omega * t).sin_cos();
                Vector3::new(
                    -radius * omega * omega * c,
                    -radius * omega * omega * s,
                    0.0,
                )
            }
        }
    }

    /// Default circular reference: radius 0.5 m around
    /// (0.2, 0) at 0.3 m, `omega = 0.3 pi`.
    pub fn default_circle() -> Self {
        Reference::Circular {
            radius: 0.5,
            center: [0.2, 0.0],
            altitude: 0.3,
            omega: 0.3 * std::f64::consts::PI,
        }
    }

    /// Default stationary target (0.3, 0.3, 0.8).
    pub fn default_setpoint() -> Self {
        Reference::Setpoint(FlatState::from_array([0.3, 0.3, 0.8, 0.0, 0.0, 0.0]))
    }
}

/// Yaw profile; yaw is an exogenous, known signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Yaw {
    Constant(f64),
    Sinusoid {
        amplitude: f64,
        omega: f64,
        offset: f64,
    },
}

impl Default for Yaw {
    fn default() -> Self {
        Yaw::Constant(0.0)
    }
}

impl Yaw {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Yaw::Constant(psi) => psi,
            Yaw::Sinusoid {
                amplitude,
                omega,
                offset,
            } => offset + amplitude * (omega * t).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub reference: Reference,
    pub initial_state: FlatState,
    pub duration: f64,
    pub dt: f64,
    pub yaw: Yaw,
    pub cert: EllipsoidCert,
    /// Add the reference acceleration to the command before saturation.
    pub feedforward: bool,
    pub reference_velocity: ReferenceVelocity,
    /// Require the start inside the certified ellipsoid and monitor that the
    /// state never leaves it.
    pub invariance_study: bool,
    /// Start of the window used for steady-state error metrics, seconds.
    pub steady_after: f64,
}

impl Scenario {
    /// Origin regulation from `initial_state`, 0.02 s steps.
    pub fn origin(cert: EllipsoidCert, initial_state: FlatState, duration: f64) -> Self {
        Self {
            reference: Reference::Origin,
            initial_state,
            duration,
            dt: 0.02,
            yaw: Yaw::default(),
            cert,
            feedforward: false,
            reference_velocity: ReferenceVelocity::Analytic,
            invariance_study: false,
            steady_after: 0.5 * duration,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "duration = {} must be at least dt = {}",
                self.duration, self.dt
            )));
        }
        if !self.initial_state.is_finite() {
            return Err(Error::InvalidParams("non-finite initial state".into()));
        }
        if self.cert.gamma.is_nan() || self.cert.gamma < 1.0 {
            return Err(Error::InvalidParams(format!(
                "gamma = {} must be >= 1",
                self.cert.gamma
            )));
        }
        if self.invariance_study {
            let e = self.initial_state - self.reference.state(0.0, self.reference_velocity);
            let level = self.cert.gain.quad_form(&e);
            if level > self.cert.eps * (1.0 + INVARIANCE_SLACK) {
                return Err(Error::InvalidParams(format!(
                    "initial state outside the certified ellipsoid: {level} > {}",
                    self.cert.eps
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Command before saturation.
    pub raw: FlatInput,
    pub sat: SaturationResult,
}

impl ControlOutput {
    pub fn v(&self) -> FlatInput {
        self.sat.v_out
    }
}

/// `sat(-gamma B'P (xi - xi_ref))`.
#[inline]
pub fn control_law(xi: &FlatState, xi_ref: &FlatState, cert: &EllipsoidCert) -> ControlOutput {
    control_law_with_feedforward(xi, xi_ref, &Vector3::zeros(), cert)
}

/// `sat(ff - gamma B'P (xi - xi_ref))`.
#[inline]
pub fn control_law_with_feedforward(
    xi: &FlatState,
    xi_ref: &FlatState,
    feedforward: &Vector3<f64>,
    cert: &EllipsoidCert,
) -> ControlOutput {
    let e = *xi - *xi_ref;
    let raw = FlatInput(cert.gain.gradient_command(cert.gamma, &e).0 + feedforward);
    ControlOutput {
        raw,
        sat: saturate(&raw, &cert.params),
    }
}

/// One classical RK4 step of `x' = f(t, x)`.
pub fn rk4<F>(f: F, t: f64, x: &Vector6<f64>, dt: f64) -> Result<Vector6<f64>>
where
    F: Fn(f64, &Vector6<f64>) -> Result<Vector6<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &(x + k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, &(x + k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, &(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Plant right-hand side for a physical input held over the step.
fn plant_rhs(
    u: &PhysicalInput,
    psi: f64,
    g: f64,
) -> Result<impl Fn(f64, &Vector6<f64>) -> Result<Vector6<f64>>> {
    let a = accel(u, psi, g)?;
    Ok(move |_t: f64, x: &Vector6<f64>| Ok(Vector6::new(x[3], x[4], x[5], a.x, a.y, a.z)))
}

/// `beta_psi` extended to the apex `(0, 0, -g)` of the flat input set.
///
/// Straight-down commands saturate onto the apex, where thrust vanishes and
/// the attitude no longer affects the acceleration. Within the set every
/// approach to the apex has tilt bounded by `eps_max` and thrust tending to
/// zero, so the apex maps to the level free-fall input `(0, 0, 0)`. Points off
/// the set with `v3 <= -g` remain domain errors.
pub fn input_map(v: &FlatInput, psi: f64, g: f64, p: &ConstraintParams) -> Result<PhysicalInput> {
    if v.v3() + g <= 0.0 && in_vc(v, p, tol::MEMBERSHIP) {
        return Ok(PhysicalInput::new(0.0, 0.0, 0.0));
    }
    to_physical(v, psi, g)
}

/// Advances the nonlinear plant by `dt` with `u = beta_psi(v)` held constant.
pub fn step_rk4(xi: &FlatState, v: &FlatInput, psi: f64, g: f64, dt: f64) -> Result<FlatState> {
    let u = to_physical(v, psi, g)?;
    step_physical(xi, &u, psi, g, dt)
}

fn step_physical(
    xi: &FlatState,
    u: &PhysicalInput,
    psi: f64,
    g: f64,
    dt: f64,
) -> Result<FlatState> {
    let next = rk4(plant_rhs(u, psi, g)?, 0.0, &xi.to_vector(), dt)?;
    Ok(FlatState::from_vector(&next))
}

/// Exact update of `xi' = A xi + B v` under a constant `v`.
pub fn exact_linear_step(xi: &FlatState, v: &FlatInput, dt: f64) -> FlatState {
    FlatState::new(
        xi.pos + xi.vel * dt + v.0 * (0.5 * dt * dt),
        xi.vel + v.0 * dt,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    InputBox,
    FlatSet,
    EllipsoidExit,
}

impl ViolationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationKind::InputBox => "input_box",
            ViolationKind::FlatSet => "flat_set",
            ViolationKind::EllipsoidExit => "ellipsoid_exit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub kind: ViolationKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub xi: FlatState,
    pub xi_ref: FlatState,
    pub v_unsat: FlatInput,
    pub v: FlatInput,
    pub u: PhysicalInput,
    /// `V(xi - xi_ref)`.
    pub lyapunov: f64,
    /// Finite-difference estimate of `dV/dt`.
    pub lyapunov_rate: f64,
    pub saturated: bool,
    pub lambda: f64,
    pub active: ActiveConstraint,
    pub in_u: bool,
    pub in_vc: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    pub violations: Vec<Violation>,
    /// Wall time of each controller evaluation, seconds. Not exported to CSV.
    pub controller_seconds: Vec<f64>,
}

impl Trace {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn saturated_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.saturated).count()
    }

    /// Central differences inside, one-sided at the ends.
    fn fill_lyapunov_rate(&mut self) {
        let n = self.rows.len();
        if n < 2 {
            return;
        }
        let dt = self.dt;
        let vals: Vec<f64> = self.rows.iter().map(|r| r.lyapunov).collect();
        for (k, row) in self.rows.iter_mut().enumerate() {
            row.lyapunov_rate = if k == 0 {
                (vals[1] - vals[0]) / dt
            } else if k == n - 1 {
                (vals[n - 1] - vals[n - 2]) / dt
            } else {
                (vals[k + 1] - vals[k - 1]) / (2.0 * dt)
            };
        }
    }
}

/// Runs a scenario to completion.
///
/// A domain error from the input map aborts with
/// [`Error::SimulationAborted`], carrying the trace up to that step.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    scenario.validate()?;
    let cert = &scenario.cert;
    let g = cert.params.g();
    let n = scenario.steps();
    let mut trace = Trace {
        dt: scenario.dt,
        rows: Vec::with_capacity(n + 1),
        violations: Vec::new(),
        controller_seconds: Vec::with_capacity(n + 1),
    };
    let mut xi = scenario.initial_state;

    for k in 0..=n {
        let t = k as f64 * scenario.dt;
        let xi_ref = scenario.reference.state(t, scenario.reference_velocity);
        let ff = if scenario.feedforward {
            scenario.reference.accel(t)
        } else {
            Vector3::zeros()
        };
        let started = Instant::now();
        let out = control_law_with_feedforward(&xi, &xi_ref, &ff, cert);
        trace
            .controller_seconds
            .push(started.elapsed().as_secs_f64());

        let psi = scenario.yaw.at(t);
        let v = out.v();
        let u = match input_map(&v, psi, g, &cert.params) {
            Ok(u) => u,
            Err(e) => return Err(abort(trace, k, e)),
        };

        let e = xi - xi_ref;
        let lyapunov = cert.gain.quad_form(&e);
        let row_in_u = in_u(&u, &cert.params, tol::INPUT_BOX);
        let row_in_vc = in_vc(&v, &cert.params, tol::MEMBERSHIP);
        if !row_in_u {
            trace.violations.push(Violation {
                step: k,
                kind: ViolationKind::InputBox,
                value: u_margin(&u, &cert.params),
            });
        }
        if !row_in_vc {
            let worst = vc_clauses(&v, &cert.params)
                .into_iter()
                .fold(f64::MIN, f64::max);
            trace.violations.push(Violation {
                step: k,
                kind: ViolationKind::FlatSet,
                value: worst,
            });
        }
        if scenario.invariance_study && lyapunov > cert.eps * (1.0 + INVARIANCE_SLACK) {
            trace.violations.push(Violation {
                step: k,
                kind: ViolationKind::EllipsoidExit,
                value: lyapunov / cert.eps,
            });
        }
        trace.rows.push(TraceRow {
            t,
            xi,
            xi_ref,
            v_unsat: out.raw,
            v,
            u,
            lyapunov,
            lyapunov_rate: f64::NAN,
            saturated: out.sat.saturated,
            lambda: out.sat.lambda,
            active: out.sat.active,
            in_u: row_in_u,
            in_vc: row_in_vc,
        });

        if k < n {
            xi = match step_physical(&xi, &u, psi, g, scenario.dt) {
                Ok(next) => next,
                Err(e) => return Err(abort(trace, k, e)),
            };
        }
    }
    trace.fill_lyapunov_rate();
    Ok(trace)
}

fn abort(mut trace: Trace, step: usize, cause: Error) -> Error {
    trace.fill_lyapunov_rate();
    Error::SimulationAborted {
        step,
        reason: cause.to_string(),
        trace: Box::new(trace),
    }
}

pub const CSV_HEADER: &str = "t,x,y,z,vx,vy,vz,x_ref,y_ref,z_ref,vx_ref,vy_ref,vz_ref,\
v1_raw,v2_raw,v3_raw,v1,v2,v3,thrust,roll,pitch,lyapunov,lyapunov_rate,lambda,\
saturated,active,in_u,in_vc";

/// Writes the trace as CSV: one row per step, floats with 17 significant digits.
pub fn write_csv<W: Write>(trace: &Trace, mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut line = String::with_capacity(512);
    for r in &trace.rows {
        line.clear();
        let floats = std::iter::once(r.t)
            .chain(r.xi.to_array())
            .chain(r.xi_ref.to_array())
            .chain(r.v_unsat.0.iter().copied())
            .chain(r.v.0.iter().copied())
            .chain([
                r.u.thrust,
                r.u.roll,
                r.u.pitch,
                r.lyapunov,
                r.lyapunov_rate,
                r.lambda,
            ]);
        for x in floats {
            line.push_str(&format!("{x:.16e},"));
        }
        line.push_str(&format!(
            "{},{},{},{}",
            r.saturated as u8, r.active, r.in_u as u8, r.in_vc as u8
        ));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Summary statistics of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub steps: usize,
    pub gamma: f64,
    /// RMS of the position error over `t >= steady_after`, metres.
    pub rms_position_error: f64,
    pub max_position_error_steady: f64,
    pub final_position_error: f64,
    /// Largest `V' + alpha V` with the finite-difference `V'`; `<= 0` ideally.
    pub max_decay_violation: f64,
    /// Largest `V(t) / (V(0) exp(-alpha t))`.
    pub max_decay_envelope_ratio: f64,
    /// Largest `V / eps`.
    pub max_level_ratio: f64,
    pub saturation_duty_cycle: f64,
    pub controller_mean_seconds: f64,
    pub controller_p99_seconds: f64,
    /// Smallest slack of any flat-set clause (negative when violated).
    pub min_flat_set_margin: f64,
    /// Smallest slack of the physical input box (negative when violated).
    pub min_input_box_margin: f64,
    pub violations: usize,
}

pub fn metrics(trace: &Trace, scenario: &Scenario) -> Metrics {
    let cert = &scenario.cert;
    let alpha = cert.gain.alpha;
    let rows = &trace.rows;
    let errors: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.t, (r.xi.pos - r.xi_ref.pos).norm()))
        .collect();
    let steady: Vec<f64> = errors
        .iter()
        .filter(|(t, _)| *t >= scenario.steady_after - 1e-12)
        .map(|&(_, e)| e)
        .collect();
    let rms = if steady.is_empty() {
        0.0
    } else {
        (steady.iter().map(|e| e * e).sum::<f64>() / steady.len() as f64).sqrt()
    };
    let v0 = rows.first().map_or(0.0, |r| r.lyapunov);
    let envelope = rows
        .iter()
        .map(|r| {
            let bound = v0 * (-alpha * r.t).exp();
            if bound > 0.0 {
                r.lyapunov / bound
            } else if r.lyapunov > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);

    let mut times = trace.controller_seconds.clone();
    times.sort_by(f64::total_cmp);
    let mean = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    let p99 = times
        .get(((times.len() as f64 * 0.99).ceil() as usize).saturating_sub(1))
        .copied()
        .unwrap_or(0.0);

    Metrics {
        steps: rows.len(),
        gamma: cert.gamma,
        rms_position_error: rms,
        max_position_error_steady: steady.iter().copied().fold(0.0, f64::max),
        final_position_error: errors.last().map_or(0.0, |&(_, e)| e),
        max_decay_violation: rows
            .iter()
            .map(|r| r.lyapunov_rate + alpha * r.lyapunov)
            .fold(f64::NEG_INFINITY, f64::max),
        max_decay_envelope_ratio: envelope,
        max_level_ratio: rows
            .iter()
            .map(|r| r.lyapunov / cert.eps)
            .fold(0.0, f64::max),
        saturation_duty_cycle: if rows.is_empty() {
            0.0
        } else {
            trace.saturated_steps() as f64 / rows.len() as f64
        },
        controller_mean_seconds: mean,
        controller_p99_seconds: p99,
        min_flat_set_margin: rows
            .iter()
            .map(|r| {
                -vc_clauses(&r.v, &cert.params)
                    .into_iter()
                    .fold(f64::MIN, f64::max)
            })
            .fold(f64::INFINITY, f64::min),
        min_input_box_margin: rows
            .iter()
            .map(|r| u_margin(&r.u, &cert.params))
            .fold(f64::INFINITY, f64::min),
        violations: trace.violations.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{boundary_starts, run_procedure};
    use approx::assert_abs_diff_eq;

    const G: f64 = 9.81;

    fn cert(alpha: f64, gamma: f64) -> EllipsoidCert {
        run_procedure(
            &ConstraintParams::table_one(),
            alpha,
            gamma,
            tol::SYNTHESIS_MARGIN,
        )
        .unwrap()
    }

    #[test]
    fn at_reference_command_is_hover() {
        let c = cert(0.75, 5.0);
        let xi = FlatState::from_array([0.3, -0.2, 1.0, 0.0, 0.0, 0.0]);
        let out = control_law(&xi, &xi, &c);
        assert_eq!(out.v(), FlatInput::zero());
        let u = to_physical(&out.v(), 0.0, G).unwrap();
        assert_eq!(u, PhysicalInput::hover(G));
    }

    #[test]
    fn boundary_command_unsaturated_at_unit_gain() {
        let c = cert(0.75, 1.0);
        for xi in boundary_starts(&c.gain, c.eps, 50) {
            let out = control_law(&xi, &FlatState::default(), &c);
            assert!(!out.sat.saturated);
            assert!(out.v().norm_squared() <= c.rho + 1e-9);
            assert_eq!(out.v(), c.gain.gradient_command(1.0, &xi));
        }
    }

    #[test]
    fn far_state_saturates_onto_boundary() {
        let c = cert(0.75, 15.0);
        let xi = FlatState::from_array([-30.0, 10.0, -25.0, 4.0, 0.0, 3.0]);
        let out = control_law(&xi, &FlatState::default(), &c);
        assert!(out.sat.saturated);
        let res = crate::saturation::clause_residuals(&out.v(), &c.params);
        assert!(res.iter().any(|&r| r <= tol::ACTIVE_CLAUSE));
    }

    #[test]
    fn apex_maps_to_free_fall() {
        let p = ConstraintParams::table_one();
        let apex = saturate(&FlatInput::new(0.0, 0.0, -3.0 * G), &p).v_out;
        let u = input_map(&apex, 0.7, G, &p).unwrap();
        assert_eq!(u, PhysicalInput::new(0.0, 0.0, 0.0));
        assert_abs_diff_eq!(accel(&u, 0.7, G).unwrap(), apex.0, epsilon = 1e-12);
        assert!(input_map(&FlatInput::new(0.0, 0.0, -G - 1.0), 0.0, G, &p).is_err());
        let near = FlatInput::new(0.0, 0.0, -G + 1e-6);
        assert_eq!(
            input_map(&near, 0.0, G, &p).unwrap(),
            to_physical(&near, 0.0, G).unwrap()
        );
    }

    #[test]
    fn rk4_rest_stays_at_rest() {
        let xi = step_rk4(&FlatState::default(), &FlatInput::zero(), 0.3, G, 0.02).unwrap();
        assert_abs_diff_eq!(xi.to_vector(), Vector6::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn rk4_matches_exact_double_integrator_step() {
        let xi = FlatState::from_array([0.1, -0.4, 1.3, 0.7, 0.2, -0.5]);
        for (v, psi) in [
            (FlatInput::new(0.8, -0.3, 1.1), 0.0),
            (FlatInput::new(-1.5, 0.9, -2.0), 1.3),
        ] {
            let rk = step_rk4(&xi, &v, psi, G, 0.05).unwrap();
            let exact = exact_linear_step(&xi, &v, 0.05);
            assert!((rk.to_vector() - exact.to_vector()).amax() <= 1e-10);
        }
    }

    #[test]
    fn rk4_is_fourth_order_on_smooth_input() {
        // v(t) evaluated at each stage, pushed through the input map and plant
        let v_of = |t: f64| {
            FlatInput::new(
                0.8 * (1.3 * t).sin(),
                0.5 * (0.7 * t).cos(),
                0.4 * (2.0 * t).sin(),
            )
        };
        let rhs = |t: f64, x: &Vector6<f64>| -> Result<Vector6<f64>> {
            let psi = 0.4 * t;
            let u = to_physical(&v_of(t), psi, G)?;
            let a = accel(&u, psi, G)?;
            Ok(Vector6::new(x[3], x[4], x[5], a.x, a.y, a.z))
        };
        // closed form of the double integrator driven by v(t)
        let exact = |t: f64| {
            let pos = Vector3::new(
                0.8 * (t / 1.3 - (1.3 * t).sin() / (1.3 * 1.3)),
                0.5 * (1.0 - (0.7 * t).cos()) / (0.7 * 0.7),
                0.4 * (t / 2.0 - (2.0 * t).sin() / 4.0),
            );
            let vel = Vector3::new(
                0.8 * (1.0 - (1.3 * t).cos()) / 1.3,
                0.5 * (0.7 * t).sin() / 0.7,
                0.4 * (1.0 - (2.0 * t).cos()) / 2.0,
            );
            Vector6::new(pos.x, pos.y, pos.z, vel.x, vel.y, vel.z)
        };
        let horizon = 2.0;
        let err = |dt: f64| {
            let n = (horizon / dt).round() as usize;
            let mut x = Vector6::zeros();
            for k in 0..n {
                x = rk4(rhs, k as f64 * dt, &x, dt).unwrap();
            }
            (x - exact(horizon)).amax()
        };
        let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
        let order1 = (e1 / e2).log2();
        let order2 = (e2 / e3).log2();
        assert!(order1 > 3.7 && order2 > 3.7, "orders {order1}, {order2}");
    }

    #[test]
    fn scenario_validation() {
        let c = cert(0.75, 1.0);
        let mut s = Scenario::origin(c, FlatState::default(), 1.0);
        assert!(s.validate().is_ok());
        s.dt = 0.0;
        assert!(s.validate().is_err());
        s.dt = 0.5;
        s.duration = 0.1;
        assert!(s.validate().is_err());
        let mut far = Scenario::origin(
            c,
            FlatState::from_array([10.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            1.0,
        );
        far.invariance_study = true;
        assert!(matches!(far.validate(), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn hover_trace_has_zero_error() {
        let c = cert(0.75, 5.0);
        let s = Scenario::origin(c, FlatState::default(), 2.0);
        let trace = run(&s).unwrap();
        assert_eq!(trace.rows.len(), 101);
        let m = metrics(&trace, &s);
        assert_eq!(m.rms_position_error, 0.0);
        assert_eq!(m.final_position_error, 0.0);
        assert_eq!(m.saturation_duty_cycle, 0.0);
        assert!(trace.is_clean());
    }

    #[test]
    fn origin_runs_stay_in_ellipsoid() {
        for gamma in [1.0, 5.0, 15.0] {
            let c = cert(0.75, gamma);
            for start in boundary_starts(&c.gain, c.eps, 5) {
                let mut s = Scenario::origin(c, start, 10.0);
                s.invariance_study = true;
                let trace = run(&s).unwrap();
                assert!(
                    trace.is_clean(),
                    "gamma {gamma}: {:?}",
                    trace.violations.first()
                );
                if gamma == 1.0 {
                    assert_eq!(trace.saturated_steps(), 0);
                }
            }
        }
    }

    #[test]
    fn yaw_rotation_does_not_change_flat_trajectory() {
        let c = cert(0.75, 5.0);
        let start = boundary_starts(&c.gain, c.eps, 1)[0];
        let still = run(&Scenario::origin(c, start, 4.0)).unwrap();
        let mut spinning = Scenario::origin(c, start, 4.0);
        spinning.yaw = Yaw::Sinusoid {
            amplitude: 1.2,
            omega: 2.0,
            offset: 0.3,
        };
        let spun = run(&spinning).unwrap();
        for (a, b) in still.rows.iter().zip(&spun.rows) {
            assert!((a.xi.to_vector() - b.xi.to_vector()).amax() <= 1e-9);
        }
        assert!(spun
            .rows
            .iter()
            .any(|r| (r.u.roll - still.rows[0].u.roll).abs() > 1e-3));
    }

    #[test]
    fn feedforward_removes_circular_lag() {
        let c = cert(1.25, 4.5);
        let mut s = Scenario::origin(c, FlatState::default(), 30.0);
        s.reference = Reference::default_circle();
        s.steady_after = 15.0;
        let plain = metrics(&run(&s).unwrap(), &s);
        s.feedforward = true;
        let ff = metrics(&run(&s).unwrap(), &s);
        assert!(ff.rms_position_error < 0.1 * plain.rms_position_error);
    }

    #[test]
    fn csv_is_deterministic_with_fixed_header() {
        let c = cert(0.75, 15.0);
        let start = boundary_starts(&c.gain, c.eps, 3)[2];
        let s = Scenario::origin(c, start, 1.0);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&run(&s).unwrap(), &mut a).unwrap();
        write_csv(&run(&s).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), CSV_HEADER.split(',').count());
        assert!(first.starts_with("0.0000000000000000e0,"));
        assert_eq!(text.lines().count(), 52);
    }
}
