//! Numerical tolerances shared across modules.

/// Absolute slack on the squared quantities of the flat input set membership test.
pub const MEMBERSHIP: f64 = 1e-9;

/// Slack allowed on the physical input box (thrust in m/s², angles in rad).
pub const INPUT_BOX: f64 = 1e-9;

/// Allowed overshoot of the linearizing map's arcsin argument before it is a domain error.
pub const ARCSIN_CLAMP: f64 = 1e-9;

/// Largest eigenvalue allowed for the Lyapunov residual of a certified gain.
pub const CERTIFICATE: f64 = 1e-6;

/// Tolerance for identities that hold exactly in real arithmetic.
pub const ALGEBRAIC: f64 = 1e-9;

/// Tolerance used when comparing against values printed to four decimals.
pub const TABLE_REPRODUCTION: f64 = 1e-2;

/// Default LMI margin used by gain synthesis.
pub const SYNTHESIS_MARGIN: f64 = 1e-6;

/// Relative tightness required of the active clause of a saturated output.
pub const ACTIVE_CLAUSE: f64 = 1e-6;
