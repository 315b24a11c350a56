//! Text serialization of [`EllipsoidCert`].
//!
//! Certificates are TOML documents:
//!
//! ```toml
//! format = "flatsat-certificate/1"
//! seed = 0
//!
//! [constraints]
//! g = 9.81
//! t_max = 14.2245
//! phi_max = 0.17453292519943295
//! theta_max = 0.17453292519943295
//! eps_max = 0.17453292519943295   # min(phi_max, theta_max), checked on load
//!
//! [gain]            # P = [[p1 I, p2 I], [p2 I, p3 I]]
//! alpha = 0.75
//! p1 = 0.2109
//! p2 = 0.2812
//! p3 = 0.75
//!
//! [level]
//! rho = 2.9019      # inscribed ball |v|^2 <= rho
//! eps = 3.8692      # ellipsoid xi'P xi <= eps
//! tau = 1.3333      # S-procedure multiplier
//! gamma = 1.0
//!
//! [margins]
//! synthesis = 1e-6
//! certificate = 1e-6
//! ```
//!
//! Floats are written in shortest round-trip form, so a load/store cycle is exact.
//! Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintParams;
use crate::error::{Error, Result};
use crate::synthesis::{EllipsoidCert, GainMatrix};

pub const FORMAT: &str = "flatsat-certificate/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertDoc {
    format: String,
    seed: u64,
    constraints: ConstraintsDoc,
    gain: GainDoc,
    level: LevelDoc,
    margins: MarginsDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintsDoc {
    g: f64,
    t_max: f64,
    phi_max: f64,
    theta_max: f64,
    eps_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainDoc {
    alpha: f64,
    p1: f64,
    p2: f64,
    p3: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDoc {
    rho: f64,
    eps: f64,
    tau: f64,
    gamma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginsDoc {
    synthesis: f64,
    certificate: f64,
}

pub fn to_toml_string(cert: &EllipsoidCert) -> String {
    let doc = CertDoc {
        format: FORMAT.to_string(),
        seed: cert.seed,
        constraints: ConstraintsDoc {
            g: cert.params.g(),
            t_max: cert.params.t_max(),
            phi_max: cert.params.phi_max(),
            theta_max: cert.params.theta_max(),
            eps_max: cert.params.eps_max(),
        },
        gain: GainDoc {
            alpha: cert.gain.alpha,
            p1: cert.gain.p1,
            p2: cert.gain.p2,
            p3: cert.gain.p3,
        },
        level: LevelDoc {
            rho: cert.rho,
            eps: cert.eps,
            tau: cert.tau,
            gamma: cert.gamma,
        },
        margins: MarginsDoc {
            synthesis: cert.synthesis_margin,
            certificate: cert.certificate_tolerance,
        },
    };
    toml::to_string(&doc).expect("certificate document always serializes")
}

/// Parses and sanity-checks a certificate. The level is *not* checked against
/// the S-procedure bound here; that is the verifier's job.
pub fn from_toml_str(text: &str) -> Result<EllipsoidCert> {
    let doc: CertDoc = toml::from_str(text).map_err(|e| Error::Certificate(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(Error::Certificate(format!(
            "unsupported format '{}', expected '{FORMAT}'",
            doc.format
        )));
    }
    let c = &doc.constraints;
    let params = ConstraintParams::new(c.g, c.t_max, c.phi_max, c.theta_max)?;
    if (params.eps_max() - c.eps_max).abs() > 1e-12 {
        return Err(Error::Certificate(format!(
            "eps_max = {} inconsistent with min(phi_max, theta_max) = {}",
            c.eps_max,
            params.eps_max()
        )));
    }
    let gain = GainMatrix::new(doc.gain.p1, doc.gain.p2, doc.gain.p3, doc.gain.alpha)?;
    let l = &doc.level;
    if !(l.rho > 0.0 && l.eps > 0.0 && l.tau >= 0.0)
        || ![l.rho, l.eps, l.tau].iter().all(|x| x.is_finite())
    {
        return Err(Error::Certificate(format!(
            "level entries must be positive and finite: rho = {}, eps = {}, tau = {}",
            l.rho, l.eps, l.tau
        )));
    }
    if !(l.gamma >= 1.0 && l.gamma.is_finite()) {
        return Err(Error::Certificate(format!(
            "gamma = {} must be >= 1",
            l.gamma
        )));
    }
    Ok(EllipsoidCert {
        params,
        gain,
        rho: l.rho,
        eps: l.eps,
        tau: l.tau,
        gamma: l.gamma,
        synthesis_margin: doc.margins.synthesis,
        certificate_tolerance: doc.margins.certificate,
        seed: doc.seed,
    })
}
