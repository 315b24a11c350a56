//! Translational quadcopter model and its flat-output linearization.
//!
//! With the position as flat output, the input map `beta_psi` sends a commanded
//! acceleration `v` to thrust and attitude `(T, phi, theta)` such that the
//! nonlinear plant reproduces `v` exactly. In flat coordinates the plant is then
//! `xi' = A xi + B v` with `A = [0 I; 0 0]`, `B = [0; I]`.

use std::ops::{Mul, Sub};

use nalgebra::{Matrix6, SMatrix, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::tol;

/// Position and velocity in the flat output space, `xi = [x, y, z, x', y', z']`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatState {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl FlatState {
    pub fn new(pos: Vector3<f64>, vel: Vector3<f64>) -> Self {
        Self { pos, vel }
    }

    pub fn from_array(xi: [f64; 6]) -> Self {
        Self {
            pos: Vector3::new(xi[0], xi[1], xi[2]),
            vel: Vector3::new(xi[3], xi[4], xi[5]),
        }
    }

    pub fn from_vector(xi: &Vector6<f64>) -> Self {
        Self {
            pos: xi.fixed_rows::<3>(0).into_owned(),
            vel: xi.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.pos.x, self.pos.y, self.pos.z, self.vel.x, self.vel.y, self.vel.z,
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.pos.x, self.pos.y, self.pos.z, self.vel.x, self.vel.y, self.vel.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.pos
            .iter()
            .chain(self.vel.iter())
            .all(|c| c.is_finite())
    }
}

impl Sub for FlatState {
    type Output = FlatState;

    fn sub(self, rhs: FlatState) -> FlatState {
        FlatState {
            pos: self.pos - rhs.pos,
            vel: self.vel - rhs.vel,
        }
    }
}

/// Commanded acceleration in the flat output space (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatInput(pub Vector3<f64>);

impl FlatInput {
    pub fn new(v1: f64, v2: f64, v3: f64) -> Self {
        Self(Vector3::new(v1, v2, v3))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    #[inline]
    pub fn v1(&self) -> f64 {
        self.0.x
    }

    #[inline]
    pub fn v2(&self) -> f64 {
        self.0.y
    }

    #[inline]
    pub fn v3(&self) -> f64 {
        self.0.z
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }
}

impl Mul<f64> for FlatInput {
    type Output = FlatInput;

    fn mul(self, k: f64) -> FlatInput {
        FlatInput(self.0 * k)
    }
}

/// Normalized thrust (m/s²), roll and pitch (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalInput {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl PhysicalInput {
    pub fn new(thrust: f64, roll: f64, pitch: f64) -> Self {
        Self {
            thrust,
            roll,
            pitch,
        }
    }

    pub fn hover(g: f64) -> Self {
        Self::new(g, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.roll.is_finite() && self.pitch.is_finite()
    }
}

/// Translational accelerations `h_psi(u)` of the nonlinear plant.
pub fn accel(u: &PhysicalInput, psi: f64, g: f64) -> Result<Vector3<f64>> {
    if !u.is_finite() || !psi.is_finite() || !g.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite plant input: u = {u:?}, psi = {psi}, g = {g}"
        )));
    }
    let (s_phi, c_phi) = u.roll.sin_cos();
    let (s_theta, c_theta) = u.pitch.sin_cos();
    let (s_psi, c_psi) = psi.sin_cos();
    let t = u.thrust;
    Ok(Vector3::new(
        t * (c_phi * s_theta * c_psi + s_phi * s_psi),
        t * (c_phi * s_theta * s_psi - s_phi * c_psi),
        t * c_phi * c_theta - g,
    ))
}

/// The linearizing input map `beta_psi`: flat acceleration to thrust and attitude.
///
/// Requires `v3 > -g` strictly; at the apex `v3 = -g` the pitch is `0/0`.
pub fn to_physical(v: &FlatInput, psi: f64, g: f64) -> Result<PhysicalInput> {
    if !v.is_finite() || !psi.is_finite() || !g.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite flat input: v = {:?}, psi = {psi}, g = {g}",
            v.0
        )));
    }
    let lift = v.v3() + g;
    if lift <= 0.0 {
        return Err(Error::Domain(format!(
            "linearizing map undefined for v3 = {} <= -g = {}",
            v.v3(),
            -g
        )));
    }
    let (s_psi, c_psi) = psi.sin_cos();
    let thrust = (v.v1() * v.v1() + v.v2() * v.v2() + lift * lift).sqrt();
    let mut sin_roll = (v.v1() * s_psi - v.v2() * c_psi) / thrust;
    if sin_roll.abs() > 1.0 {
        if sin_roll.abs() > 1.0 + tol::ARCSIN_CLAMP {
            return Err(Error::Domain(format!(
                "roll sine {sin_roll} outside [-1, 1]"
            )));
        }
        sin_roll = sin_roll.clamp(-1.0, 1.0);
    }
    Ok(PhysicalInput {
        thrust,
        roll: sin_roll.asin(),
        pitch: ((v.v1() * c_psi + v.v2() * s_psi) / lift).atan(),
    })
}

/// `A` of the flat model: three decoupled double integrators.
pub fn a_matrix() -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    a
}

/// `B` of the flat model.
pub fn b_matrix() -> SMatrix<f64, 6, 3> {
    let mut b = SMatrix::<f64, 6, 3>::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).fill_with_identity();
    b
}

/// `A xi + B v`, i.e. `(vel, v)`.
pub fn flat_dynamics(xi: &FlatState, v: &FlatInput) -> Vector6<f64> {
    Vector6::new(xi.vel.x, xi.vel.y, xi.vel.z, v.v1(), v.v2(), v.v3())
}
