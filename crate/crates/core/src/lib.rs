//! Flatness-based saturated control for a quadcopter.
//!
//! The translational dynamics are linearized exactly through the flat output
//! (position), which turns them into three decoupled double integrators. The
//! thrust and tilt limits become a convex set in the flat input space; a
//! gradient controller is scaled back along its own ray onto that set, and an
//! invariant ellipsoid certifies stability and constraint satisfaction.
//!
//! Module map:
//!
//! - [`flat_model`]: nonlinear plant, linearizing input map and the linear flat model.
//! - [`constraints`]: the physical box, its convex flat-space inner set and the inscribed ball.
//! - [`saturation`]: explicit ray saturation from a finite KKT candidate set, plus a bisection oracle.
//! - [`synthesis`]: stabilizing gain, invariant level and certificate verification.
//! - [`certificate`]: text serialization of certificates.
//! - [`simulation`]: closed-loop scenarios, traces, CSV export and metrics.

pub mod certificate;
pub mod constraints;
mod error;
pub mod flat_model;
pub mod linalg;
pub mod saturation;
pub mod simulation;
pub mod synthesis;
pub mod tol;

pub use constraints::{ConstraintParams, InscribedBall};
pub use error::{Error, Result};
pub use flat_model::{FlatInput, FlatState, PhysicalInput};
pub use saturation::{ActiveConstraint, SaturationResult};
pub use synthesis::{EllipsoidCert, GainMatrix};

/// Standard gravity used by every default parameter set, m/s².
pub const DEFAULT_GRAVITY: f64 = 9.81;
