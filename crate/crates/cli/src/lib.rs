//! Subcommand implementations behind the `flatsat` binary.
//!
//! Each command writes human-readable output to the supplied writer and files
//! under the output directory, and returns a [`Status`]. Errors carry their
//! exit code through [`exit_code`].

pub mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use flatsat::certificate;
use flatsat::saturation::{saturate, saturate_oracle};
use flatsat::simulation::{self, metrics, Metrics, Scenario};
use flatsat::synthesis::{alpha_sweep, boundary_starts, eps_max, run_procedure, verify_cert};
use flatsat::{ConstraintParams, EllipsoidCert, Error, FlatInput};
use rayon::prelude::*;
use serde::Serialize;

pub use config::RunConfig;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "FLATSAT_OUTPUT_DIR";

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_SYNTHESIS: u8 = 2;
pub const EXIT_MONITOR: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    /// A monitor or verification check failed; outputs were still written.
    Violations,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Clean => 0,
            Status::Violations => EXIT_MONITOR,
        }
    }
}

/// Exit code for a failed command: infeasible synthesis is 2, an aborted
/// simulation 3, anything else a usage or configuration error.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<Error>() {
            Some(Error::Synthesis(_)) => return EXIT_SYNTHESIS,
            Some(Error::SimulationAborted { .. }) => return EXIT_MONITOR,
            _ => {}
        }
    }
    EXIT_USAGE
}

/// Flag, then environment, then config file, then `./out`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| {
            std::env::var_os(OUTPUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn synthesize(cfg: &RunConfig, params: &ConstraintParams) -> anyhow::Result<EllipsoidCert> {
    let mut cert = run_procedure(params, cfg.alpha(), cfg.gamma(), cfg.margin())?;
    cert.seed = cfg.seed();
    cert.certificate_tolerance = cfg.certificate_tolerance();
    Ok(cert)
}

pub fn load_certificate(path: &Path) -> anyhow::Result<EllipsoidCert> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading certificate {}", path.display()))?;
    certificate::from_toml_str(&text)
        .with_context(|| format!("loading certificate {}", path.display()))
}

/// The certificate given on the command line or in the config, else a fresh synthesis.
fn certificate_for(cfg: &RunConfig, flag: Option<&Path>) -> anyhow::Result<EllipsoidCert> {
    match flag.or(cfg.scenario.certificate.as_deref()) {
        Some(path) => load_certificate(path),
        None => synthesize(cfg, &cfg.params()?),
    }
}

pub fn synth_report(cert: &EllipsoidCert) -> String {
    let p = &cert.params;
    let g = &cert.gain;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "constraints     g = {}, T_max = {:.6}, phi_max = {:.6}, theta_max = {:.6}, eps_max = {:.6}",
        p.g(),
        p.t_max(),
        p.phi_max(),
        p.theta_max(),
        p.eps_max()
    );
    let _ = writeln!(s, "inscribed ball  rho = {:.6}", cert.rho);
    let _ = writeln!(s, "decay rate      alpha = {}", g.alpha);
    let _ = writeln!(
        s,
        "gain matrix     p1 = {:.6}, p2 = {:.6}, p3 = {:.6}",
        g.p1, g.p2, g.p3
    );
    let _ = writeln!(
        s,
        "lyapunov check  lambda_max = {:.3e}",
        g.lyapunov_residual()
    );
    let _ = writeln!(
        s,
        "invariant level eps = {:.6}, tau = {:.6}",
        cert.eps, cert.tau
    );
    let _ = writeln!(s, "gain scale      gamma = {}", cert.gamma);
    let _ = writeln!(s, "projected area  {:.6}", g.projected_area(cert.eps));
    let _ = writeln!(
        s,
        "margins         synthesis = {:e}, certificate = {:e}",
        cert.synthesis_margin, cert.certificate_tolerance
    );
    s
}

pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> anyhow::Result<Status> {
    let cert = synthesize(cfg, &cfg.params()?)?;
    create_dir(out_dir)?;
    let cert_path = out_dir.join("cert.toml");
    fs::write(&cert_path, certificate::to_toml_string(&cert))
        .with_context(|| format!("writing {}", cert_path.display()))?;
    let report = synth_report(&cert);
    fs::write(out_dir.join("synth_report.txt"), &report)?;
    write!(out, "{report}")?;
    writeln!(out, "certificate     {}", cert_path.display())?;
    Ok(Status::Clean)
}

pub fn cmd_saturate(
    v: [f64; 3],
    params: &ConstraintParams,
    oracle: bool,
    out: &mut dyn Write,
) -> anyhow::Result<Status> {
    let v = FlatInput::new(v[0], v[1], v[2]);
    let r = saturate(&v, params);
    writeln!(out, "lambda    {}", r.lambda)?;
    writeln!(
        out,
        "v_out     {} {} {}",
        r.v_out.v1(),
        r.v_out.v2(),
        r.v_out.v3()
    )?;
    writeln!(out, "saturated {}", r.saturated)?;
    writeln!(out, "active    {}", r.active)?;
    if oracle {
        let lambda = saturate_oracle(&v, params, 60);
        writeln!(out, "bisection {lambda}")?;
        writeln!(out, "abs diff  {:e}", (lambda - r.lambda).abs())?;
    }
    Ok(Status::Clean)
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    reference: String,
    duration: f64,
    dt: f64,
    alpha: f64,
    rho: f64,
    eps: f64,
    feedforward: bool,
    runs: Vec<RunSummary>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    gamma: f64,
    trace: String,
    passed: bool,
    converged: Option<bool>,
    metrics: Metrics,
}

fn gamma_tag(gamma: f64) -> String {
    format!("{gamma}").replace('.', "p")
}

fn write_trace(path: &Path, trace: &simulation::Trace) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    simulation::write_csv(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    cert_flag: Option<&Path>,
    gammas_flag: Option<&[f64]>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> anyhow::Result<Status> {
    let base = certificate_for(cfg, cert_flag)?;
    let gammas = match gammas_flag {
        Some(g) if !g.is_empty() => g.to_vec(),
        _ if !cfg.gammas().is_empty() => cfg.gammas(),
        _ => vec![base.gamma],
    };
    if let Some(bad) = gammas.iter().find(|g| !(**g >= 1.0 && g.is_finite())) {
        anyhow::bail!("gamma = {bad} must be >= 1");
    }
    create_dir(out_dir)?;
    let reference = cfg.reference()?;
    let band = cfg.scenario.convergence_band;
    let mut runs = Vec::with_capacity(gammas.len());
    let mut status = Status::Clean;

    for &gamma in &gammas {
        let scenario = Scenario {
            reference,
            initial_state: cfg.initial_state(),
            duration: cfg.duration(),
            dt: cfg.dt(),
            yaw: cfg.yaw(),
            cert: EllipsoidCert { gamma, ..base },
            feedforward: cfg.scenario.feedforward.unwrap_or(false),
            reference_velocity: cfg.reference_velocity(),
            invariance_study: cfg.scenario.invariance_study.unwrap_or(false),
            steady_after: cfg.steady_after(),
        };
        let name = format!("trace_gamma_{}.csv", gamma_tag(gamma));
        let path = out_dir.join(&name);
        let trace = match simulation::run(&scenario) {
            Ok(trace) => trace,
            Err(Error::SimulationAborted {
                step,
                reason,
                trace,
            }) => {
                write_trace(&path, &trace)?;
                return Err(Error::SimulationAborted {
                    step,
                    reason,
                    trace,
                })
                .with_context(|| format!("gamma = {gamma}: partial trace in {}", path.display()));
            }
            Err(e) => return Err(e.into()),
        };
        write_trace(&path, &trace)?;
        let m = metrics(&trace, &scenario);
        let converged = band.map(|b| m.final_position_error <= b);
        let passed = trace.is_clean() && converged != Some(false);
        if !passed {
            status = Status::Violations;
        }
        writeln!(
            out,
            "gamma {gamma:<6} rms {:.4} m  final {:.2e} m  saturated {:.1}%  violations {}  controller mean {:.2e} s  p99 {:.2e} s  {}",
            m.rms_position_error,
            m.final_position_error,
            100.0 * m.saturation_duty_cycle,
            m.violations,
            m.controller_mean_seconds,
            m.controller_p99_seconds,
            if passed { "ok" } else { "FAIL" }
        )?;
        if let Some(v) = trace.violations.first() {
            writeln!(
                out,
                "  first violation: step {} {} ({:e})",
                v.step,
                v.kind.as_str(),
                v.value
            )?;
        }
        runs.push(RunSummary {
            gamma,
            trace: name,
            passed,
            converged,
            metrics: m,
        });
    }

    let summary = SimulationSummary {
        reference: format!("{:?}", cfg.reference_kind()).to_lowercase(),
        duration: cfg.duration(),
        dt: cfg.dt(),
        alpha: base.gain.alpha,
        rho: base.rho,
        eps: base.eps,
        feedforward: cfg.scenario.feedforward.unwrap_or(false),
        runs,
    };
    fs::write(out_dir.join("summary.toml"), toml::to_string(&summary)?)?;
    Ok(status)
}

pub fn cmd_verify(
    cert_path: &Path,
    samples: usize,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> anyhow::Result<Status> {
    anyhow::ensure!(samples >= 1, "samples must be at least 1");
    let cert = load_certificate(cert_path)?;
    let seed = seed.unwrap_or(cert.seed);
    let report = verify_cert(&cert, samples, seed);
    let bound = eps_max(&cert.gain, cert.rho).eps;
    writeln!(out, "certificate   {}", cert_path.display())?;
    writeln!(
        out,
        "samples       {} (seed {seed}), {} saturated",
        report.n_samples, report.saturated_samples
    )?;
    writeln!(out, "level         eps = {} (bound {bound})", cert.eps)?;
    writeln!(
        out,
        "lyapunov      lambda_max = {:.3e}",
        report.lyapunov_residual
    )?;
    writeln!(
        out,
        "nagumo        {} failures, worst {:.3e}",
        report.nagumo_failures, report.worst_nagumo
    )?;
    writeln!(
        out,
        "decay         {} failures, worst {:.3e}",
        report.decay_failures, report.worst_decay
    )?;
    writeln!(
        out,
        "gain scale    {} failures, worst {:.3e}",
        report.gain_scale_failures, report.worst_gain_scale
    )?;
    if !report.passed() {
        if let Some(w) = &report.worst_sample {
            writeln!(
                out,
                "worst sample  #{} ({}): value {:.6e} at xi = {:?}",
                w.index, w.check, w.value, w.xi
            )?;
        }
        if !report.level_within_bound {
            writeln!(out, "level exceeds the largest certifiable value")?;
        }
        writeln!(out, "FAIL")?;
        return Ok(Status::Violations);
    }
    writeln!(out, "PASS")?;
    Ok(Status::Clean)
}

#[derive(Debug, Clone, Copy)]
struct SweepRun {
    gamma: f64,
    start: usize,
    max_level_ratio: f64,
    max_decay_envelope_ratio: f64,
    saturated_steps: usize,
    violations: usize,
    final_lyapunov: f64,
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    cert_flag: Option<&Path>,
    gammas_flag: Option<&[f64]>,
    starts_flag: Option<usize>,
    alphas_flag: Option<&[f64]>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> anyhow::Result<Status> {
    let base = certificate_for(cfg, cert_flag)?;
    let gammas = gammas_flag
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| cfg.sweep_gammas());
    let n_starts = starts_flag.unwrap_or_else(|| cfg.sweep_starts());
    anyhow::ensure!(n_starts >= 1, "starts must be at least 1");
    if let Some(bad) = gammas.iter().find(|g| !(**g >= 1.0 && g.is_finite())) {
        anyhow::bail!("gamma = {bad} must be >= 1");
    }
    create_dir(out_dir)?;

    let starts = boundary_starts(&base.gain, base.eps, n_starts);
    let jobs: Vec<(f64, usize)> = gammas
        .iter()
        .flat_map(|&g| (0..starts.len()).map(move |i| (g, i)))
        .collect();
    let results: Vec<anyhow::Result<SweepRun>> = jobs
        .par_iter()
        .map(|&(gamma, i)| {
            let mut scenario = Scenario::origin(
                EllipsoidCert { gamma, ..base },
                starts[i],
                cfg.sweep_duration(),
            );
            scenario.dt = cfg.sweep_dt();
            scenario.invariance_study = true;
            let trace = simulation::run(&scenario)?;
            let m = metrics(&trace, &scenario);
            Ok(SweepRun {
                gamma,
                start: i,
                max_level_ratio: m.max_level_ratio,
                max_decay_envelope_ratio: m.max_decay_envelope_ratio,
                saturated_steps: trace.saturated_steps(),
                violations: trace.violations.len(),
                final_lyapunov: trace.rows.last().map_or(0.0, |r| r.lyapunov),
            })
        })
        .collect();
    let runs = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;

    let mut csv = String::from(
        "gamma,start,max_level_ratio,max_decay_envelope_ratio,saturated_steps,violations,final_lyapunov\n",
    );
    for r in &runs {
        let _ = writeln!(
            csv,
            "{},{},{:.16e},{:.16e},{},{},{:.16e}",
            r.gamma,
            r.start,
            r.max_level_ratio,
            r.max_decay_envelope_ratio,
            r.saturated_steps,
            r.violations,
            r.final_lyapunov
        );
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;

    let mut status = Status::Clean;
    for &gamma in &gammas {
        let group: Vec<&SweepRun> = runs.iter().filter(|r| r.gamma == gamma).collect();
        let exits = group.iter().filter(|r| r.violations > 0).count();
        let saturating = group.iter().filter(|r| r.saturated_steps > 0).count();
        let worst = group.iter().map(|r| r.max_level_ratio).fold(0.0, f64::max);
        // inside the ellipsoid the unit-gain command never leaves the inscribed ball
        let unexpected_saturation = gamma == 1.0 && saturating > 0;
        if exits > 0 || unexpected_saturation {
            status = Status::Violations;
        }
        writeln!(
            out,
            "gamma {gamma:<6} runs {:<3} with violations {exits}  saturating {saturating}  max V/eps {worst:.9}",
            group.len()
        )?;
    }

    if let Some(alphas) = alphas_flag
        .map(<[f64]>::to_vec)
        .or_else(|| cfg.sweep.alphas.clone())
    {
        let rows = alpha_sweep(&base.params, &alphas, cfg.margin())?;
        let mut csv = String::from("alpha,p1,p2,p3,eps,projected_area\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.alpha, r.gain.p1, r.gain.p2, r.gain.p3, r.eps, r.projected_area
            );
            writeln!(
                out,
                "alpha {:<6} eps {:.6}  projected area {:.6}",
                r.alpha, r.eps, r.projected_area
            )?;
        }
        fs::write(out_dir.join("alpha_sweep.csv"), csv)?;
    }
    writeln!(
        out,
        "{}",
        if status == Status::Clean {
            "PASS"
        } else {
            "FAIL"
        }
    )?;
    Ok(status)
}
