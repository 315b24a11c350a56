//! Run configuration, read from TOML.
//!
//! Every field is optional; a missing file or section falls back to the
//! reference quadcopter (`g = 9.81`, `T_max = 1.45 g`, 10 degree tilt limits)
//! with decay rate 0.75 and unit gain scale. Unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! output_dir = "out"
//!
//! [constraints]
//! g = 9.81
//! thrust_ratio = 1.45          # T_max = thrust_ratio * g, unless t_max is set
//! phi_max = 0.17453292519943295
//! theta_max = 0.17453292519943295
//!
//! [synthesis]
//! alpha = 0.75
//! gamma = 1.0
//! margin = 1e-6
//! certificate_tolerance = 1e-6
//!
//! [scenario]
//! reference = "circular"       # "origin" | "setpoint" | "circular"
//! radius = 0.5
//! center = [0.2, 0.0]
//! altitude = 0.3
//! omega = 0.9424777960769379
//! duration = 60.0
//! dt = 0.02
//! gammas = [4.5]
//! yaw = { amplitude = 0.5, omega = 1.0, offset = 0.0 }   # or yaw = 0.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use flatsat::constraints::{DEFAULT_THRUST_RATIO, DEFAULT_TILT};
use flatsat::simulation::{Reference, ReferenceVelocity, Yaw};
use flatsat::{tol, ConstraintParams, FlatState, DEFAULT_GRAVITY};
use serde::Deserialize;

/// Initial state of the origin-regulation study.
pub const DEFAULT_INITIAL_STATE: [f64; 6] = [-3.77, -0.46, -3.60, 0.94, -0.24, 2.31];

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    pub g: Option<f64>,
    pub t_max: Option<f64>,
    pub thrust_ratio: Option<f64>,
    pub phi_max: Option<f64>,
    pub theta_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub margin: Option<f64>,
    pub certificate_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    #[default]
    Origin,
    Setpoint,
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum YawSpec {
    Constant(f64),
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        offset: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocitySpec {
    #[default]
    Analytic,
    Zero,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub reference: Option<ReferenceKind>,
    /// Target state for `setpoint`; the first three entries may be given alone.
    pub setpoint: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub center: Option<[f64; 2]>,
    pub altitude: Option<f64>,
    pub omega: Option<f64>,
    pub initial_state: Option<[f64; 6]>,
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub gammas: Option<Vec<f64>>,
    pub yaw: Option<YawSpec>,
    pub feedforward: Option<bool>,
    pub reference_velocity: Option<VelocitySpec>,
    pub invariance_study: Option<bool>,
    pub steady_after: Option<f64>,
    /// Required final position error in metres; exceeding it is a monitor failure.
    pub convergence_band: Option<f64>,
    /// Use this certificate instead of synthesizing one.
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub starts: Option<usize>,
    pub gammas: Option<Vec<f64>>,
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub alphas: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every value that does not need a full synthesis to judge.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.params()?;
        let alpha = self.alpha();
        ensure!(
            alpha > 0.0 && alpha.is_finite(),
            "alpha = {alpha} must be positive"
        );
        for gamma in self.gammas().iter().chain(self.sweep_gammas().iter()) {
            ensure!(
                *gamma >= 1.0 && gamma.is_finite(),
                "gamma = {gamma} must be >= 1"
            );
        }
        let margin = self.margin();
        ensure!(
            margin >= 0.0 && margin.is_finite(),
            "margin = {margin} must be >= 0"
        );
        ensure!(
            self.dt() > 0.0 && self.dt().is_finite(),
            "dt must be positive"
        );
        ensure!(self.duration() >= self.dt(), "duration must be at least dt");
        ensure!(self.samples() >= 1, "verify.samples must be at least 1");
        ensure!(self.sweep_starts() >= 1, "sweep.starts must be at least 1");
        if let Some(alphas) = &self.sweep.alphas {
            ensure!(
                alphas.iter().all(|a| *a > 0.0 && a.is_finite()),
                "sweep.alphas must be positive"
            );
        }
        if let Some(band) = self.scenario.convergence_band {
            ensure!(band > 0.0, "convergence_band must be positive");
        }
        self.reference()?;
        Ok(())
    }

    pub fn params(&self) -> anyhow::Result<ConstraintParams> {
        let c = &self.constraints;
        let g = c.g.unwrap_or(DEFAULT_GRAVITY);
        if c.t_max.is_some() && c.thrust_ratio.is_some() {
            bail!("set either constraints.t_max or constraints.thrust_ratio, not both");
        }
        let t_max = c
            .t_max
            .unwrap_or(c.thrust_ratio.unwrap_or(DEFAULT_THRUST_RATIO) * g);
        Ok(ConstraintParams::new(
            g,
            t_max,
            c.phi_max.unwrap_or(DEFAULT_TILT),
            c.theta_max.unwrap_or(DEFAULT_TILT),
        )?)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn alpha(&self) -> f64 {
        self.synthesis.alpha.unwrap_or(0.75)
    }

    pub fn gamma(&self) -> f64 {
        self.synthesis.gamma.unwrap_or(1.0)
    }

    pub fn margin(&self) -> f64 {
        self.synthesis.margin.unwrap_or(tol::SYNTHESIS_MARGIN)
    }

    pub fn certificate_tolerance(&self) -> f64 {
        self.synthesis
            .certificate_tolerance
            .unwrap_or(tol::CERTIFICATE)
    }

    /// Gain scales for `simulate`; empty means "use the certificate's".
    pub fn gammas(&self) -> Vec<f64> {
        self.scenario.gammas.clone().unwrap_or_default()
    }

    pub fn reference_kind(&self) -> ReferenceKind {
        self.scenario.reference.unwrap_or_default()
    }

    pub fn reference(&self) -> anyhow::Result<Reference> {
        let s = &self.scenario;
        Ok(match self.reference_kind() {
            ReferenceKind::Origin => Reference::Origin,
            ReferenceKind::Setpoint => match &s.setpoint {
                None => Reference::default_setpoint(),
                Some(v) if v.len() == 3 => {
                    Reference::Setpoint(FlatState::from_array([v[0], v[1], v[2], 0.0, 0.0, 0.0]))
                }
                Some(v) if v.len() == 6 => {
                    Reference::Setpoint(FlatState::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]))
                }
                Some(v) => bail!("setpoint needs 3 or 6 entries, got {}", v.len()),
            },
            ReferenceKind::Circular => {
                let Reference::Circular {
                    radius,
                    center,
                    altitude,
                    omega,
                } = Reference::default_circle()
                else {
                    unreachable!()
                };
                let r = Reference::Circular {
                    radius: s.radius.unwrap_or(radius),
                    center: s.center.unwrap_or(center),
                    altitude: s.altitude.unwrap_or(altitude),
                    omega: s.omega.unwrap_or(omega),
                };
                if let Reference::Circular { radius, omega, .. } = r {
                    ensure!(radius >= 0.0 && omega.is_finite(), "bad circular reference");
                }
                r
            }
        })
    }

    /// Origin runs start from the regulation-study state, tracking runs at rest
    /// at the origin.
    pub fn initial_state(&self) -> FlatState {
        let default = match self.reference_kind() {
            ReferenceKind::Origin => DEFAULT_INITIAL_STATE,
            _ => [0.0; 6],
        };
        FlatState::from_array(self.scenario.initial_state.unwrap_or(default))
    }

    pub fn duration(&self) -> f64 {
        self.scenario.duration.unwrap_or(20.0)
    }

    pub fn dt(&self) -> f64 {
        self.scenario.dt.unwrap_or(0.02)
    }

    pub fn yaw(&self) -> Yaw {
        match self.scenario.yaw {
            None => Yaw::Constant(0.0),
            Some(YawSpec::Constant(psi)) => Yaw::Constant(psi),
            Some(YawSpec::Sinusoid {
                amplitude,
                omega,
                offset,
            }) => Yaw::Sinusoid {
                amplitude,
                omega,
                offset,
            },
        }
    }

    pub fn reference_velocity(&self) -> ReferenceVelocity {
        match self.scenario.reference_velocity.unwrap_or_default() {
            VelocitySpec::Analytic => ReferenceVelocity::Analytic,
            VelocitySpec::Zero => ReferenceVelocity::Zero,
        }
    }

    pub fn steady_after(&self) -> f64 {
        self.scenario.steady_after.unwrap_or(0.5 * self.duration())
    }

    pub fn samples(&self) -> usize {
        self.verify.samples.unwrap_or(10_000)
    }

    pub fn sweep_starts(&self) -> usize {
        self.sweep.starts.unwrap_or(20)
    }

    pub fn sweep_gammas(&self) -> Vec<f64> {
        self.sweep
            .gammas
            .clone()
            .unwrap_or_else(|| vec![1.0, 5.0, 15.0])
    }

    pub fn sweep_duration(&self) -> f64 {
        self.sweep.duration.unwrap_or(20.0)
    }

    pub fn sweep_dt(&self) -> f64 {
        self.sweep.dt.unwrap_or(0.02)
    }
}
