//! Built-in verification battery. Each suite checks one analytic claim
//! against an independent reference computation; the report is a
//! deterministic function of the seed and scale.

pub mod oracle;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::feynman::{feynman_kac_estimate, gaussian_mass, shifted_gaussian_integral, FkOptions, GaussianMode, KernelBlock};
use crate::hjb::{control_field_from_theta, solve_theta_backward, Axis, GridTag, HjbProblem, SolverOptions, ValueGrid};
use crate::io::write_trajectories_csv;
use crate::lqg::q_constant;
use crate::model::{ConstantPolicy, CrossTerm, DiffusionBlock, ModelParams, PerFish, SchoolState};
use crate::rng::{stream, stream_rng, uniform};
use crate::scalar::sqrt_eight_thirds;
use crate::sde::{generator_apply, generator_mc, simulate, DynamicsSpec, GenericDynamics, VelocityConvention};
use crate::strategy::{case_diagnostics, closed_form_strategy, foc_residual, Example1Context, StrategyMode};

/// Problem sizes of the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Reduced sizes for a run of a few seconds.
    #[default]
    Quick,
    /// The sizes of the acceptance criteria.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub scale: Scale,
    pub all_passed: bool,
    pub suites: Vec<SuiteResult>,
}

struct Suite {
    id: u32,
    name: &'static str,
    metrics: BTreeMap<String, f64>,
    notes: Vec<String>,
}

impl Suite {
    fn new(id: u32, name: &'static str) -> Self {
        Suite { id, name, metrics: BTreeMap::new(), notes: Vec::new() }
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    fn finish(self, passed: bool) -> SuiteResult {
        SuiteResult { id: self.id, name: self.name.to_string(), passed, metrics: self.metrics, notes: self.notes }
    }
}

/// Ids of every suite, in run order.
pub const SUITE_IDS: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Runs the suites in `ids` (all when empty).
pub fn run_battery(seed: u64, scale: Scale, ids: &[u32]) -> Result<VerifyReport> {
    let want = |id: u32| ids.is_empty() || ids.contains(&id);
    let mut suites = Vec::new();
    let runners: [(u32, fn(u64, Scale) -> Result<SuiteResult>); 10] = [
        (1, closed_form_vs_bisection),
        (2, hjb_path_integral_duality),
        (3, shifted_gaussian_vs_quadrature),
        (4, lq_riccati),
        (5, constant_potential),
        (6, case_checks),
        (7, q_constant_check),
        (8, flocking_contraction),
        (9, determinism),
        (10, generator_check),
    ];
    for (id, run) in runners {
        if want(id) {
            suites.push(run(seed, scale)?);
        }
    }
    let all_passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport { seed, scale, all_passed, suites })
}

fn pick(scale: Scale, quick: usize, full: usize) -> usize {
    match scale {
        Scale::Quick => quick,
        Scale::Full => full,
    }
}

/// Random Example-1 context with `|2αHxv|` bounded away from zero.
pub fn random_example_context<R: Rng>(rng: &mut R) -> Result<Example1Context<f64>> {
    let n = rng.random_range(2..=10);
    let mut p = ModelParams::new(n);
    p.discount = PerFish::Each((0..n).map(|_| uniform(rng, 0.05, 0.5)).collect());
    p.weight = PerFish::Each((0..n).map(|_| uniform(rng, 0.5, 2.0)).collect());
    p.survival = PerFish::Each((0..n).map(|_| uniform(rng, 0.1, 1.0)).collect());
    p.comm_rate = uniform(rng, 0.1, 2.0);
    p.coupling = uniform(rng, 0.1, 2.0);
    p.mult1 = uniform(rng, 0.0, 1.0);
    p.mult2 = uniform(rng, 0.0, 1.0);
    p.mult3 = uniform(rng, 0.0, 1.0);
    p.sigma1 = uniform(rng, 0.1, 1.0);
    p.sigma2 = uniform(rng, 0.05, 1.0);
    p.corr = uniform(rng, -0.5, 0.5);
    let xs = (0..n).map(|_| uniform(rng, 0.2, 3.0)).collect();
    let vs = (0..n).map(|_| uniform(rng, 0.2, 3.0)).collect();
    let k = uniform(rng, -1.0, 1.0);
    Example1Context::new(p, SchoolState::new(0.0, xs, vs), k)
}

fn closed_form_vs_bisection(seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(1, "closed-form strategy vs bisection on the first-order condition");
    let n_configs = pick(scale, 50, 200);
    let mut rng = stream_rng(seed, stream::VERIFY, 1);
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for _ in 0..n_configs {
        let ctx = random_example_context(&mut rng)?;
        let s = uniform(&mut rng, 0.0, 2.0);
        let fish = rng.random_range(0..ctx.params.n_fish);
        let u = closed_form_strategy(&ctx, s, fish)?;
        let (x, v) = (ctx.school.positions[fish], ctx.school.velocities[fish]);
        let f = |w: f64| foc_residual(&ctx, fish, s, x, v, w).unwrap_or(f64::NAN);
        match oracle::find_root(&f) {
            Some(r) => {
                let err = (u - r).abs() / r.abs().max(1e-300);
                let err = if u == r { 0.0 } else { err };
                worst = worst.max(err);
            }
            None => failures += 1,
        }
    }
    suite.metric("configs", n_configs as f64);
    suite.metric("max_relative_error", worst);
    suite.metric("bracket_failures", failures as f64);
    Ok(suite.finish(failures == 0 && worst <= 1e-8))
}

/// OU drift `−½(x, v)`, `σ₁ = σ₂ = ½`, `ρ = 0.3`, `W = 0.2(x² + v²)`.
pub fn duality_problem() -> Result<HjbProblem<f64>> {
    HjbProblem::new(
        |_, x, v| 0.2 * (x * x + v * v),
        |_, x, _| -0.5 * x,
        |_, _, v| -0.5 * v,
        DiffusionBlock::new(0.5, 0.5, 0.3, CrossTerm::Paper),
        1.0,
    )
}

/// Twenty probe points on the nodes of both duality grids.
pub fn duality_probes() -> Vec<(f64, f64)> {
    let xs = [-1.2, -0.6, 0.0, 0.6, 1.2];
    let vs = [-0.9, -0.3, 0.3, 0.9];
    xs.iter().flat_map(|&x| vs.iter().map(move |&v| (x, v))).collect()
}

fn hjb_path_integral_duality(seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(2, "HJB finite differences vs Feynman–Kac Monte Carlo");
    let problem = duality_problem()?;
    let (n_nodes, fd_steps, n_paths, n_seeds) = match scale {
        Scale::Quick => (41, 400, 4_000, 2),
        Scale::Full => (101, 2_000, 100_000, 10),
    };
    let horizon = 0.5;
    let ax = Axis::new(-3.0, 3.0, n_nodes)?;
    let terminal = ValueGrid::constant(ax, ax, horizon, GridTag::Theta, 1.0)?;
    let theta = solve_theta_backward(&problem, &terminal, 0.0, horizon, fd_steps, SolverOptions::default())?;
    let probes = duality_probes();
    let mut within = 0usize;
    let mut total = 0usize;
    let mut max_z = 0.0f64;
    for k in 0..n_seeds {
        for &(x, v) in &probes {
            let fd = theta.interpolate(x, v);
            let mc = feynman_kac_estimate(&problem, 0.0, x, v, horizon, n_paths, 0.02, seed.wrapping_add(k), FkOptions::default())?;
            let z = (mc.value - fd).abs() / mc.stderr;
            max_z = max_z.max(z);
            if (mc.value - fd).abs() <= 3.0 * mc.stderr {
                within += 1;
            }
            total += 1;
        }
    }
    let frac = within as f64 / total as f64;
    suite.metric("grid_nodes", n_nodes as f64);
    suite.metric("paths", n_paths as f64);
    suite.metric("comparisons", total as f64);
    suite.metric("fraction_within_3_stderr", frac);
    suite.metric("max_abs_z", max_z);
    Ok(suite.finish(frac >= 0.95))
}

fn shifted_gaussian_vs_quadrature(seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(3, "shifted Gaussian closed form vs adaptive quadrature");
    let n_blocks = pick(scale, 40, 200);
    let mut rng = stream_rng(seed, stream::VERIFY, 3);
    let mut worst = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for _ in 0..n_blocks {
        let block = random_pd_block(&mut rng);
        let exact = shifted_gaussian_integral(&block, GaussianMode::Exact)?;
        let quad = quadrature_of_block(&block);
        worst = worst.max((exact - quad).abs() / quad.abs());
        let ratio = gaussian_mass(&block, GaussianMode::Paper)? / gaussian_mass(&block, GaussianMode::Exact)?;
        worst_ratio = worst_ratio.max((ratio / block.epsilon.sqrt() - 1.0).abs());
    }
    suite.metric("blocks", n_blocks as f64);
    suite.metric("max_relative_error", worst);
    suite.metric("max_ratio_error", worst_ratio);
    Ok(suite.finish(worst <= 1e-6 && worst_ratio <= 1e-10))
}

/// PD block with condition number at most 100, `ε ∈ (0.1, 10)`.
pub fn random_pd_block<R: Rng>(rng: &mut R) -> KernelBlock<f64> {
    let e1 = uniform(rng, 0.2, 2.0);
    let cond = (uniform(rng, 0.0, 1.0) * 100f64.ln()).exp();
    let e2 = e1 * cond;
    let th = uniform(rng, 0.0, std::f64::consts::PI);
    let (c, s) = (th.cos(), th.sin());
    let h11 = c * c * e1 + s * s * e2;
    let h22 = s * s * e1 + c * c * e2;
    let h12 = c * s * (e1 - e2);
    let shift = [uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0)];
    let eps = uniform(rng, 0.1, 10.0);
    KernelBlock::new([[h11, h12], [h12, h22]], shift, eps)
}

fn quadrature_of_block(b: &KernelBlock<f64>) -> f64 {
    let [[a, c], [_, d]] = b.hessian;
    let det = a * d - c * c;
    let [v1, v2] = b.shift;
    // Mode m* = H⁻¹V/2; integrate the centred integrand over a wide box.
    let m1 = 0.5 * (d * v1 - c * v2) / det;
    let m2 = 0.5 * (-c * v1 + a * v2) / det;
    let e = b.epsilon;
    let peak = e * (v1 * m1 + v2 * m2 - (a * m1 * m1 + 2.0 * c * m1 * m2 + d * m2 * m2));
    let f = |x: f64, y: f64| {
        let (p, q) = (x + m1, y + m2);
        (e * (v1 * p + v2 * q - (a * p * p + 2.0 * c * p * q + d * q * q)) - peak).exp()
    };
    let w1 = 12.0 * (d / det / (2.0 * e)).sqrt();
    let w2 = 12.0 * (a / det / (2.0 * e)).sqrt();
    oracle::adaptive_2d(&f, (-w1, w1), (-w2, w2), 1e-10) * peak.exp()
}

fn lq_riccati(_seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(4, "LQ feedback from Θ vs Riccati gain");
    let (a, q, m, r, sigma, t_end) = (-0.5, 0.5, 0.5, 1.0, 1.0, 1.0);
    let n_nodes = pick(scale, 201, 401);
    let (problem, theta) = solve_scalar_lq(a, q, m, r, sigma, t_end, n_nodes)?;
    let u = control_field_from_theta(&theta, problem.omega, r, problem.omega_epsilon)?;
    let p0 = oracle::rk4(&|_, p| -q - 2.0 * a * p + 2.0 * p * p / r, t_end, 0.0, m, 10_000);
    let xs = theta.x.coords();
    let mut worst = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        if x.abs() <= 1.0 + 1e-12 {
            worst = worst.max((u.values[[i, 1]] + 2.0 * p0 * x / r).abs());
        }
    }
    suite.metric("grid_nodes", n_nodes as f64);
    suite.metric("riccati_p0", p0);
    suite.metric("max_abs_error", worst);
    Ok(suite.finish(worst <= 1e-3))
}

/// Scalar LQ maximization `max E[∫ (−q x² − ½R u²) ds − m x_T²]`,
/// `dx = (a x + u) ds + σ dB`, posed on an `(x, v)` grid with a passive
/// three-node `v` axis. Cancelling the quadratic terms of the maximization
/// needs `ω = −Rσ²`. Returns `Θ` at time 0.
pub fn solve_scalar_lq(
    a: f64,
    q: f64,
    m: f64,
    r: f64,
    sigma: f64,
    t_end: f64,
    n_nodes: usize,
) -> Result<(HjbProblem<f64>, ValueGrid<f64>)> {
    let omega = -r * sigma * sigma;
    let problem = HjbProblem::new(
        move |_, x, _| -q * x * x,
        move |_, x, _| a * x,
        |_, _, _| 0.0,
        DiffusionBlock::new(sigma, 0.0, 0.0, CrossTerm::Conventional),
        r,
    )?
    .with_omega(omega);
    let ax = Axis::new(-5.0, 5.0, n_nodes)?;
    let av = Axis::new(-1.0, 1.0, 3)?;
    let terminal = ValueGrid::from_fn(ax, av, t_end, GridTag::Theta, |x, _| (m * x * x / omega).exp())?;
    let h = ax.spacing();
    let steps = (t_end / (0.2 * h * h / (sigma * sigma))).ceil() as usize;
    let theta = solve_theta_backward(&problem, &terminal, 0.0, t_end, steps, SolverOptions::default())?;
    Ok((problem, theta))
}

fn constant_potential(seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(5, "constant potential closed form");
    let c: f64 = 0.3;
    let problem = HjbProblem::new(
        move |_, _, _| c,
        |_, x, _| -0.5 * x,
        |_, _, v| -0.5 * v,
        DiffusionBlock::new(0.5, 0.5, 0.3, CrossTerm::Paper),
        1.0,
    )?;
    let tau: f64 = 1.0;
    let exact = (-(c / problem.omega) * tau).exp();
    let ax = Axis::new(-1.0, 1.0, 5)?;
    let terminal = ValueGrid::constant(ax, ax, tau, GridTag::Theta, 1.0)?;
    let theta = solve_theta_backward(&problem, &terminal, 0.0, tau, 200_000, SolverOptions::default())?;
    let fd_err = theta.values.iter().map(|t| (t - exact).abs()).fold(0.0, f64::max);
    let n_paths = pick(scale, 1_000, 10_000);
    let mc = feynman_kac_estimate(&problem, 0.0, 0.3, -0.2, tau, n_paths, 0.01, seed, FkOptions::default())?;
    let mc_gap = (mc.value - exact).abs();
    // A constant potential gives every path the same weight, so the stderr
    // is zero; rounding in the weight sum is allowed for.
    let mc_ok = mc_gap <= 3.0 * mc.stderr + 1e-12;
    suite.metric("exact", exact);
    suite.metric("fd_max_abs_error", fd_err);
    suite.metric("mc_abs_error", mc_gap);
    suite.metric("mc_stderr", mc.stderr);
    Ok(suite.finish(fd_err <= 1e-6 && mc_ok))
}

/// Three-fish context used by the case checks.
pub fn case_context(mode: StrategyMode) -> Result<Example1Context<f64>> {
    let mut p = ModelParams::new(3);
    p.mult1 = 0.3;
    p.mult2 = 0.4;
    p.mult3 = 0.5;
    p.comm_rate = 0.8;
    p.coupling = 1.2;
    p.discount = PerFish::Shared(0.2);
    p.weight = PerFish::Shared(1.5);
    p.survival = PerFish::Shared(0.9);
    let school = SchoolState::new(0.0, vec![1.0, 1.4, 2.5], vec![0.8, 1.1, 0.5]);
    let mut ctx = Example1Context::new(p, school, 0.3)?;
    ctx.mode = mode;
    Ok(ctx)
}

fn case_checks(_seed: u64, _scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(6, "strategy case diagnostics");
    let mut ok = true;
    for (mode, tag) in [(StrategyMode::FocConsistent, "foc"), (StrategyMode::PaperVerbatim, "verbatim")] {
        let d = case_diagnostics(&case_context(mode)?, 0.6, 0)?;
        let i_err = d.case_i.scaling_error.unwrap_or(f64::INFINITY);
        let iv_err = d.case_iv.factor_error.unwrap_or(f64::INFINITY);
        suite.metric(&format!("{tag}.case_i_scaling_error"), i_err);
        suite.metric(&format!("{tag}.case_ii_limit"), d.case_ii.u_star[d.case_ii.u_star.len() - 1]);
        suite.metric(&format!("{tag}.case_iii_computed_limit"), d.case_iii.computed_limit);
        suite.metric(&format!("{tag}.case_iv_factor_error"), iv_err);
        ok &= i_err <= 1e-10 && d.case_i.increasing && iv_err <= 1e-10 && d.case_iv.increasing;
        ok &= d.case_iii.computed_limit == 0.0;
        if mode == StrategyMode::PaperVerbatim {
            let e = d.case_ii.verbatim_error.unwrap_or(f64::INFINITY);
            suite.metric("case_ii_printed_limit", d.case_ii.printed_limit);
            suite.metric("case_ii_verbatim_error", e);
            suite.metric("case_ii_foc_over_printed", d.case_ii.foc_over_printed.unwrap_or(f64::NAN));
            suite.metric("case_iii_printed_claim", d.case_iii.printed_claim);
            ok &= e <= 1e-10;
            if d.case_iii.discrepancy {
                suite.notes.push(format!(
                    "case III: computed limit {} differs from the printed claim {}",
                    d.case_iii.computed_limit, d.case_iii.printed_claim
                ));
            }
        }
    }
    suite.notes.push("case II: the first-order-condition root equals the printed limit times ψ".into());
    Ok(suite.finish(ok))
}

fn q_constant_check(_seed: u64, _scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(7, "Q constant at γ = √(8/3)");
    let q: f64 = q_constant(sqrt_eight_thirds())?;
    suite.metric("q", q);
    suite.metric("abs_error", (q - 2.0412415).abs());
    Ok(suite.finish((q - 2.0412415).abs() <= 1e-6))
}

fn flocking_contraction(seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(8, "noise-free alignment contracts the velocity spread");
    let n_inits = pick(scale, 10, 50);
    let mut rng = stream_rng(seed, stream::VERIFY, 8);
    let spec = DynamicsSpec::cucker_smale(VelocityConvention::Alignment);
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    for _ in 0..n_inits {
        let n = rng.random_range(2..=8);
        let mut p = ModelParams::new(n);
        p.comm_rate = uniform(&mut rng, 0.2, 1.5);
        p.coupling = uniform(&mut rng, 0.2, 1.5);
        let xs = (0..n).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let vs = (0..n).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let init = SchoolState::new(0.0, xs, vs);
        let ens = simulate(&spec, &p, &ConstantPolicy(1.0), &init, 10.0, 0.01, 1, seed)?;
        let spreads: Vec<f64> = ens.paths[0].states.iter().map(|s| s.velocity_spread()).collect();
        for w in spreads.windows(2) {
            if w[1] > w[0] * (1.0 + 1e-12) {
                violations += 1;
            }
        }
        worst_ratio = worst_ratio.max(spreads[spreads.len() - 1] / spreads[0]);
    }
    suite.metric("initializations", n_inits as f64);
    suite.metric("steps", 1000.0);
    suite.metric("increases", violations as f64);
    suite.metric("max_final_over_initial", worst_ratio);
    Ok(suite.finish(violations == 0))
}

fn determinism(seed: u64, _scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(9, "seeded runs repeat bit for bit");
    let mut p = ModelParams::new(4);
    p.sigma1 = 0.3;
    p.sigma2 = 0.2;
    p.corr = 0.2;
    let init = SchoolState::new(0.0, vec![0.0, 0.5, 1.0, 1.5], vec![1.0, 0.8, 1.2, 0.9]);
    let spec = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
    let run = |seed: u64| -> Result<Vec<u8>> {
        let ens = simulate(&spec, &p, &ConstantPolicy(0.5), &init, 1.0, 0.01, 16, seed)?;
        let mut buf = Vec::new();
        write_trajectories_csv(&ens, &mut buf).map_err(|e| crate::Error::numerical(e.to_string()))?;
        Ok(buf)
    };
    let (a, b, c) = (run(seed)?, run(seed)?, run(seed.wrapping_add(1))?);
    let problem = duality_problem()?;
    let fk = |s| feynman_kac_estimate(&problem, 0.0, 0.3, 0.3, 0.5, 2_000, 0.02, s, FkOptions::default());
    let (e1, e2) = (fk(seed)?, fk(seed)?);
    let same_sim = a == b;
    let same_fk = e1.value.to_bits() == e2.value.to_bits() && e1.stderr.to_bits() == e2.stderr.to_bits();
    suite.metric("trajectory_bytes", a.len() as f64);
    suite.metric("identical_trajectories", f64::from(u8::from(same_sim)));
    suite.metric("identical_estimates", f64::from(u8::from(same_fk)));
    suite.metric("other_seed_differs", f64::from(u8::from(a != c)));
    Ok(suite.finish(same_sim && same_fk && a != c))
}

fn generator_check(seed: u64, scale: Scale) -> Result<SuiteResult> {
    let mut suite = Suite::new(10, "Monte Carlo generator vs analytic generator");
    let n = pick(scale, 20_000, 100_000);
    let dyn_ = GenericDynamics::new(|_, _, v, u| u * v, |_, _, _, _| 0.5, |_, _, v, _| -0.5 * v, |_, _, _, _| 0.4);
    let tests: [(&str, fn(f64, f64, f64) -> f64); 2] =
        [("x2_plus_v2", |_, x, v| x * x + v * v), ("xv_plus_sx", |s, x, v| x * v + s * x)];
    let mut ok = true;
    for (k, (name, h)) in tests.iter().enumerate() {
        let (s, x, v, u) = (0.2, 0.7, -0.4, 0.5);
        let analytic = generator_apply(&dyn_, 0.3, CrossTerm::Paper, h, s, x, v, u);
        let mc = generator_mc(&dyn_, 0.3, CrossTerm::Paper, h, s, x, v, u, 1e-3, n, seed.wrapping_add(k as u64))?;
        let z = (mc.value - analytic).abs() / mc.stderr;
        suite.metric(&format!("{name}.analytic"), analytic);
        suite.metric(&format!("{name}.mc"), mc.value);
        suite.metric(&format!("{name}.z"), z);
        ok &= z <= 4.0;
    }
    suite.metric("samples", n as f64);
    Ok(suite.finish(ok))
}
