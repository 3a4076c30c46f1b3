//! Pipelines behind each subcommand, output staging and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fishgame_core::feynman::{feynman_kac_estimate, transition_step, FkEstimate, FkOptions, KernelBlock};
use fishgame_core::hjb::{control_field_from_theta, solve_theta_backward, GridTag, HjbProblem, SolverOptions, ValueGrid};
use fishgame_core::io::{fmt_float, write_grid_csv, write_trajectories_csv, GridHeader};
use fishgame_core::lqg::{q_constant, sample_field};
use fishgame_core::model::{estimate_objective, ConstantPolicy, ObjectiveEstimate, Policy, RewardSpec};
use fishgame_core::sde::{simulate, steps_for, DynamicsSpec};
use fishgame_core::strategy::{case_diagnostics, strategy_report, CaseDiagnostics, ClosedFormPolicy, Example1Context, StrategyTerms};
use fishgame_core::verify::{run_battery, VerifyReport};
use fishgame_core::{Grid, Params};
use log::{debug, info};
use serde::Serialize;

use crate::config::{HjbMethod, PolicyKind, RunConfig, SCHEMA_VERSION};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Simulate school trajectories and estimate the objective.
    Simulate,
    /// Solve the linearized HJB equation backward on a grid.
    SolveHjb,
    /// Estimate Θ at probe points by Feynman–Kac Monte Carlo.
    EstimateTheta,
    /// Evaluate the closed-form strategy and its limiting cases.
    Strategy,
    /// Sample the log-correlated field and its surface weight.
    Field,
    /// Run the built-in verification battery.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SolveHjb => "solve-hjb",
            Command::EstimateTheta => "estimate-theta",
            Command::Strategy => "strategy",
            Command::Field => "field",
            Command::Verify => "verify",
        }
    }
}

/// What was asked for, recorded verbatim in the manifest.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Invocation {
    pub config_path: PathBuf,
    pub seed_override: Option<u64>,
    pub mode_overrides: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Files are written into a hidden directory under `dir` and moved into
/// place only when the whole run succeeds.
struct Staging {
    dir: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
}

impl Staging {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let staging = dir.join(format!(".fishgame-staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(CliError::io(&staging))?;
        }
        fs::create_dir(&staging).map_err(CliError::io(&staging))?;
        Ok(Staging { dir: dir.to_path_buf(), staging, files: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
        let path = self.staging.join(name);
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut out = BufWriter::new(file);
        f(&mut out).and_then(|_| out.flush()).map_err(CliError::io(&path))?;
        self.files.push(name.to_string());
        debug!("staged {name}");
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)
        })
    }

    fn grid(&mut self, stem: &str, grid: &Grid) -> Result<(), CliError> {
        self.write(&format!("{stem}.csv"), |out| write_grid_csv(grid, out))?;
        self.json(&format!("{stem}.json"), &GridHeader::of(grid))
    }

    fn commit(self) -> Result<(), CliError> {
        for name in &self.files {
            let dest = self.dir.join(name);
            fs::rename(self.staging.join(name), &dest).map_err(CliError::io(&dest))?;
        }
        fs::remove_dir(&self.staging).map_err(CliError::io(&self.staging))
    }

    fn discard(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

#[derive(Serialize)]
struct Versions {
    fishgame_cli: &'static str,
    fishgame_core: &'static str,
    schema: u32,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'static str,
    status: &'static str,
    seed: u64,
    invocation: &'a Invocation,
    versions: Versions,
    config: &'a RunConfig,
    files: &'a [String],
    wall_time_seconds: f64,
}

/// Runs `command` and writes its outputs into `out`. On failure nothing from
/// this run is left behind, except that a failed verification still keeps its
/// report.
pub fn run(command: Command, config: &RunConfig, out: &Path, invocation: &Invocation) -> Result<(), CliError> {
    let start = Instant::now();
    let mut stage = Staging::create(out)?;
    info!("{} with seed {}", command.name(), config.seed);
    let result = match command {
        Command::Simulate => run_simulate(config, &mut stage),
        Command::SolveHjb => run_solve_hjb(config, &mut stage),
        Command::EstimateTheta => run_estimate_theta(config, &mut stage),
        Command::Strategy => run_strategy(config, &mut stage),
        Command::Field => run_field(config, &mut stage),
        Command::Verify => run_verify(config, &mut stage),
    };
    let status = match &result {
        Ok(()) => "ok",
        Err(CliError::VerifyFailed(_)) => "verification-failed",
        Err(_) => {
            stage.discard();
            return result;
        }
    };
    let mut files = stage.files.clone();
    files.push(MANIFEST.to_string());
    let manifest = Manifest {
        subcommand: command.name(),
        status,
        seed: config.seed,
        invocation,
        versions: Versions { fishgame_cli: env!("CARGO_PKG_VERSION"), fishgame_core: fishgame_core::VERSION, schema: SCHEMA_VERSION },
        config,
        files: &files,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    if let Err(e) = stage.json(MANIFEST, &manifest) {
        stage.discard();
        return Err(e);
    }
    stage.commit()?;
    info!("wrote {} files to {}", files.len(), out.display());
    result
}

#[derive(Serialize)]
struct SimulateReport {
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    horizon: f64,
    /// Velocity spread of each path at the horizon.
    final_velocity_spread: Vec<f64>,
    objective: Option<ObjectiveEstimate<f64>>,
}

fn strategy_context(cfg: &RunConfig) -> Result<Example1Context<f64>, CliError> {
    let s = &cfg.strategy;
    let k = match s.k {
        Some(k) => k,
        None => sample_field(cfg.field.gamma, cfg.field.truncation, cfg.seed)?.eval(s.l),
    };
    let mut ctx = Example1Context::new(cfg.model.clone(), cfg.initial.clone(), k)?;
    ctx.mode = cfg.modes.strategy;
    ctx.partials = s.partials;
    ctx.drift = s.drift;
    ctx.denominator_epsilon = s.denominator_epsilon;
    ctx.validate()?;
    Ok(ctx)
}

fn run_simulate(cfg: &RunConfig, stage: &mut Staging) -> Result<(), CliError> {
    let p = &cfg.model;
    let sim = &cfg.simulate;
    let spec = DynamicsSpec::cucker_smale(cfg.modes.velocity);
    let policy: Box<dyn Policy<f64>> = match sim.policy {
        PolicyKind::Zero => Box::new(ConstantPolicy(0.0)),
        PolicyKind::Constant => Box::new(ConstantPolicy(sim.control)),
        PolicyKind::ClosedForm => Box::new(ClosedFormPolicy::from_context(&strategy_context(cfg)?)),
    };
    let ensemble = simulate(&spec, p, policy.as_ref(), &cfg.initial, p.horizon, p.dt, sim.n_paths, cfg.seed)?;
    stage.write("trajectories.csv", |out| write_trajectories_csv(&ensemble, out))?;
    let objective = if sim.objective {
        Some(estimate_objective(&spec, p, &RewardSpec::Example1, policy.as_ref(), &cfg.initial, sim.n_paths, cfg.seed)?)
    } else {
        None
    };
    let report = SimulateReport {
        n_paths: ensemble.n_paths,
        n_steps: ensemble.n_steps,
        dt: p.dt,
        horizon: p.horizon,
        final_velocity_spread: ensemble.paths.iter().map(|t| t.states.last().map_or(0.0, |s| s.velocity_spread())).collect(),
        objective,
    };
    stage.json("report.json", &report)
}

fn hjb_problem(cfg: &RunConfig) -> Result<HjbProblem<f64>, CliError> {
    let h = &cfg.hjb;
    let (w, mx, mv) = (h.reward, h.drift_x, h.drift_v);
    let mut problem = HjbProblem::from_params(
        &cfg.model,
        move |_, x, v| w.eval(x, v),
        move |_, x, v| mx.eval(x, v),
        move |_, x, v| mv.eval(x, v),
    )?;
    if let Some(omega) = h.omega {
        problem = problem.with_omega(omega);
    }
    problem.checked_omega()?;
    Ok(problem)
}

fn terminal_grid(cfg: &RunConfig) -> Result<Grid, CliError> {
    let g = &cfg.grid;
    Ok(ValueGrid::constant(g.x, g.v, cfg.model.horizon, GridTag::Theta, g.terminal)?)
}

/// Configured step count, or the smallest one meeting the stability bound.
fn fd_steps(cfg: &RunConfig, problem: &HjbProblem<f64>, terminal: &Grid) -> Result<usize, CliError> {
    if let Some(n) = cfg.grid.n_time_steps {
        return Ok(n);
    }
    let horizon = cfg.model.horizon;
    let dmax = problem.diffusion.xx().max(problem.diffusion.vv());
    if dmax <= 0.0 {
        return Ok(steps_for(horizon, cfg.model.dt)?);
    }
    let (hx, hv) = (terminal.x.spacing(), terminal.v.spacing());
    let limit = cfg.hjb.stability * (hx * hx).min(hv * hv) / dmax;
    let mut n = ((horizon / limit).ceil() as usize).max(1);
    while horizon / n as f64 > limit {
        n += 1;
    }
    Ok(n)
}

fn solve_fd(cfg: &RunConfig, problem: &HjbProblem<f64>) -> Result<(Grid, usize), CliError> {
    let terminal = terminal_grid(cfg)?;
    let n = fd_steps(cfg, problem, &terminal)?;
    info!("finite-difference solve with {n} steps");
    let theta = solve_theta_backward(problem, &terminal, 0.0, cfg.model.horizon, n, SolverOptions { stability: cfg.hjb.stability })?;
    Ok((theta, n))
}

/// `Θ(s) = e^{−W dt/ω} E[Θ(s + dt, · + ξ)]` with `ξ ~ N(0, Σ dt)`, each step
/// done as a localized Gaussian transition.
fn solve_kernel(cfg: &RunConfig, problem: &HjbProblem<f64>) -> Result<(Grid, usize), CliError> {
    if !(cfg.hjb.drift_x.is_zero() && cfg.hjb.drift_v.is_zero()) {
        return Err(CliError::Config("hjb.method = \"kernel\" needs zero drift_x and drift_v".into()));
    }
    let d = problem.diffusion;
    let (a, b, c) = (d.xx(), d.xv(), d.vv());
    let det = a * c - b * b;
    if !(det > 0.0) {
        return Err(CliError::Config("hjb.method = \"kernel\" needs a nondegenerate diffusion (sigma1, sigma2 > 0)".into()));
    }
    let omega = problem.checked_omega()?;
    let n = match cfg.grid.n_time_steps {
        Some(n) => n,
        None => steps_for(cfg.model.horizon, cfg.model.dt)?,
    };
    let dt = cfg.model.horizon / n as f64;
    // exp(−ε ξᵀHξ) with ε = dt must equal exp(−ξᵀΣ⁻¹ξ / 2dt).
    let scale = 1.0 / (2.0 * dt * dt * det);
    let block = KernelBlock::new([[c * scale, -b * scale], [-b * scale, a * scale]], [0.0, 0.0], dt);
    let w = cfg.hjb.reward;
    let f = move |x: f64, v: f64| w.eval(x, v) / omega;
    let mut theta = terminal_grid(cfg)?;
    info!("kernel solve with {n} steps of {} nodes", cfg.hjb.kernel_nodes);
    for k in (0..n).rev() {
        let next = transition_step(&theta, &f, &block, cfg.hjb.localization, cfg.modes.gaussian, cfg.hjb.kernel_nodes)?;
        theta = next.with_values(next.values.clone(), GridTag::Theta);
        theta.time = k as f64 * dt;
    }
    Ok((theta, n))
}

#[derive(Serialize)]
struct HjbReport {
    method: HjbMethod,
    n_time_steps: usize,
    s_start: f64,
    s_end: f64,
    omega: f64,
    theta_min: f64,
    theta_max: f64,
    control_min: f64,
    control_max: f64,
}

fn extent(g: &Grid) -> (f64, f64) {
    g.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn run_solve_hjb(cfg: &RunConfig, stage: &mut Staging) -> Result<(), CliError> {
    let problem = hjb_problem(cfg)?;
    let (theta, n) = match cfg.hjb.method {
        HjbMethod::FiniteDifference => solve_fd(cfg, &problem)?,
        HjbMethod::Kernel => solve_kernel(cfg, &problem)?,
    };
    let control = control_field_from_theta(&theta, problem.omega, problem.quad_cost, problem.omega_epsilon)?;
    stage.grid("theta", &theta)?;
    stage.grid("control", &control)?;
    let (theta_min, theta_max) = extent(&theta);
    let (control_min, control_max) = extent(&control);
    stage.json(
        "report.json",
        &HjbReport {
            method: cfg.hjb.method,
            n_time_steps: n,
            s_start: 0.0,
            s_end: cfg.model.horizon,
            omega: problem.omega,
            theta_min,
            theta_max,
            control_min,
            control_max,
        },
    )
}

#[derive(Serialize)]
struct ProbeEstimate {
    x: f64,
    v: f64,
    #[serde(flatten)]
    estimate: FkEstimate<f64>,
    /// Grid solution at the probe and `(mc − grid) / stderr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_score: Option<f64>,
}

#[derive(Serialize)]
struct ThetaReport {
    s: f64,
    tau: f64,
    dt: f64,
    probes: Vec<ProbeEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    within_3_stderr: Option<f64>,
}

fn run_estimate_theta(cfg: &RunConfig, stage: &mut Staging) -> Result<(), CliError> {
    let problem = hjb_problem(cfg)?;
    let terminal = terminal_grid(cfg)?;
    let grid = if cfg.theta.compare_fd { Some(solve_fd(cfg, &problem)?.0) } else { None };
    let p: &Params = &cfg.model;
    let options = FkOptions { scheme: cfg.modes.scheme, terminal: Some(&terminal) };
    let mut probes = Vec::new();
    for &[x, v] in &cfg.theta.probes {
        let estimate = feynman_kac_estimate(&problem, 0.0, x, v, p.horizon, cfg.theta.n_paths, p.dt, cfg.seed, options)?;
        let grid_value = grid.as_ref().map(|g| g.interpolate(x, v));
        let z_score = grid_value.map(|g| (estimate.value - g) / estimate.stderr);
        probes.push(ProbeEstimate { x, v, estimate, grid_value, z_score });
    }
    let within_3_stderr = grid.as_ref().map(|_| {
        let ok = probes.iter().filter(|p| p.z_score.is_some_and(|z| z.abs() <= 3.0)).count();
        ok as f64 / probes.len() as f64
    });
    stage.json("report.json", &ThetaReport { s: 0.0, tau: p.horizon, dt: p.dt, probes, within_3_stderr })
}

#[derive(Serialize)]
struct StrategyReport {
    time: f64,
    k: f64,
    strategies: Vec<StrategyTerms<f64>>,
    cases: Option<CaseDiagnostics<f64>>,
}

fn run_strategy(cfg: &RunConfig, stage: &mut Staging) -> Result<(), CliError> {
    let ctx = strategy_context(cfg)?;
    let time = cfg.strategy.time.unwrap_or(cfg.initial.time);
    let strategies = strategy_report(&ctx, time)?;
    let cases = cfg.strategy.cases_fish.map(|f| case_diagnostics(&ctx, time, f)).transpose()?;
    stage.json("report.json", &StrategyReport { time, k: ctx.k, strategies, cases })
}

#[derive(Serialize)]
struct FieldReport {
    gamma: f64,
    truncation: usize,
    q: f64,
    k_min: f64,
    k_max: f64,
}

fn run_field(cfg: &RunConfig, stage: &mut Staging) -> Result<(), CliError> {
    let f = &cfg.field;
    let field = sample_field(f.gamma, f.truncation, cfg.seed)?;
    let mut rows = Vec::with_capacity(f.n_points);
    for j in 0..f.n_points {
        let l = std::f64::consts::TAU * j as f64 / f.n_points as f64;
        rows.push((l, field.eval(l), field.metric_weight(l)?));
    }
    stage.json("field.json", &field)?;
    stage.write("field.csv", |out| {
        writeln!(out, "l,k,weight")?;
        for (l, k, w) in &rows {
            writeln!(out, "{},{},{}", fmt_float(*l), fmt_float(*k), fmt_float(*w))?;
        }
        Ok(())
    })?;
    let (k_min, k_max) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.1), hi.max(r.1)));
    stage.json("report.json", &FieldReport { gamma: f.gamma, truncation: f.truncation, q: q_constant(f.gamma)?, k_min, k_max })
}

fn run_verify(cfg: &RunConfig, stage: &mut Staging) -> Result<(), CliError> {
    let report: VerifyReport = run_battery(cfg.seed, cfg.modes.scale, &cfg.verify.suites)?;
    for s in &report.suites {
        info!("suite {} {}: {}", s.id, s.name, if s.passed { "pass" } else { "FAIL" });
    }
    stage.json("report.json", &report)?;
    if report.all_passed {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(report.suites.iter().filter(|s| !s.passed).map(|s| s.id).collect()))
    }
}
