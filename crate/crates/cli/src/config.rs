//! Run configuration: a versioned TOML document, strictly parsed and then
//! resolved into a fully explicit [`RunConfig`].
//!
//! Required keys are `schema_version`, `seed`, `model.n_fish`,
//! `model.horizon` and `model.dt`. Everything else has a default, and the
//! resolved value (defaults included) is echoed into the run manifest.

use fishgame_core::feynman::{FkScheme, GaussianMode, Localization};
use fishgame_core::hjb::Axis;
use fishgame_core::model::{CrossTerm, Interval, ModelParams, PerFish, SchoolState};
use fishgame_core::sde::VelocityConvention;
use fishgame_core::strategy::{DriftReading, PartialReading, StrategyMode};
use fishgame_core::verify::{Scale, SUITE_IDS};
use fishgame_core::{sqrt_eight_thirds, Params, School};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Model constants as written in the file; unset keys take the library
/// defaults of [`ModelParams::new`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_fish: usize,
    pub horizon: f64,
    pub dt: f64,
    pub discount: Option<PerFish<f64>>,
    pub weight: Option<PerFish<f64>>,
    pub survival: Option<PerFish<f64>>,
    pub comm_rate: Option<f64>,
    pub coupling: Option<f64>,
    pub mult1: Option<f64>,
    pub mult2: Option<f64>,
    pub mult3: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub corr: Option<f64>,
    pub quad_cost: Option<f64>,
    pub reward_floor: Option<f64>,
    pub cross_term: Option<CrossTerm>,
    pub reachable: Option<PerFish<Interval<f64>>>,
    pub omega_epsilon: Option<f64>,
}

impl ModelSection {
    fn resolve(self) -> Params {
        let mut p = ModelParams::new(self.n_fish);
        p.horizon = self.horizon;
        p.dt = self.dt;
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { p.$f = v; })*};
        }
        take!(discount, weight, survival, comm_rate, coupling, mult1, mult2, mult3);
        take!(sigma1, sigma2, corr, quad_cost, reward_floor, cross_term, omega_epsilon);
        p.reachable = self.reachable;
        p
    }
}

/// Initial school. Defaults to positions `1, 2, …, I` and velocities
/// `1.0, 1.1, …`, at time 0.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub time: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

fn default_school(n: usize) -> School {
    SchoolState::new(0.0, (0..n).map(|i| (i + 1) as f64).collect(), (0..n).map(|i| 1.0 + 0.1 * i as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    Zero,
    Constant,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_paths: usize,
    pub policy: PolicyKind,
    /// Control applied by the `constant` policy.
    pub control: f64,
    /// Also estimate the objective with the `x·v·u²` reward.
    pub objective: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { n_paths: 4, policy: PolicyKind::Zero, control: 0.0, objective: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x: Axis<f64>,
    pub v: Axis<f64>,
    /// Backward steps; the smallest stable count when unset.
    pub n_time_steps: Option<usize>,
    /// Constant terminal value `Θ(t, ·)`.
    pub terminal: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let ax = Axis { min: -1.0, max: 1.0, n: 41 };
        GridSection { x: ax, v: ax, n_time_steps: None, terminal: 1.0 }
    }
}

/// `c + a·x + b·v`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Affine {
    pub constant: f64,
    pub x: f64,
    pub v: f64,
}

impl Affine {
    pub fn eval(&self, x: f64, v: f64) -> f64 {
        self.constant + self.x * x + self.v * v
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.x == 0.0 && self.v == 0.0
    }
}

/// `c + a·x + b·v + p·x² + q·xv + r·v²`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quadratic {
    pub constant: f64,
    pub x: f64,
    pub v: f64,
    pub xx: f64,
    pub xv: f64,
    pub vv: f64,
}

impl Quadratic {
    pub fn eval(&self, x: f64, v: f64) -> f64 {
        self.constant + self.x * x + self.v * v + self.xx * x * x + self.xv * x * v + self.vv * v * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HjbMethod {
    #[default]
    FiniteDifference,
    /// Repeated localized Gaussian transition steps; drift-free problems only.
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbSection {
    /// Running reward `W(x, v)`.
    pub reward: Quadratic,
    pub drift_x: Affine,
    pub drift_v: Affine,
    /// Overrides the `ω` derived from the model constants.
    pub omega: Option<f64>,
    pub stability: f64,
    pub method: HjbMethod,
    pub kernel_nodes: usize,
    pub localization: Localization<f64>,
}

impl Default for HjbSection {
    fn default() -> Self {
        HjbSection {
            reward: Quadratic::default(),
            drift_x: Affine::default(),
            drift_v: Affine::default(),
            omega: None,
            stability: 0.25,
            method: HjbMethod::FiniteDifference,
            kernel_nodes: 16,
            localization: Localization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaSection {
    /// `(x, v)` start points.
    pub probes: Vec<[f64; 2]>,
    pub n_paths: usize,
    /// Also solve the grid problem and report the difference in stderr units.
    pub compare_fd: bool,
}

impl Default for ThetaSection {
    fn default() -> Self {
        ThetaSection { probes: vec![[0.0, 0.0]], n_paths: 10_000, compare_fd: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    /// Field value `k`; sampled from the `[field]` settings at `l` when unset.
    pub k: Option<f64>,
    pub l: f64,
    /// Evaluation time; the initial school time when unset.
    pub time: Option<f64>,
    /// Fish whose case diagnostics are reported; none when unset.
    pub cases_fish: Option<usize>,
    pub partials: PartialReading,
    pub drift: DriftReading,
    pub denominator_epsilon: f64,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            k: None,
            l: 0.0,
            time: None,
            cases_fish: Some(0),
            partials: PartialReading::default(),
            drift: DriftReading::default(),
            denominator_epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub gamma: f64,
    pub truncation: usize,
    /// Evaluation points on `[0, 2π)`.
    pub n_points: usize,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection { gamma: sqrt_eight_thirds(), truncation: 64, n_points: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Suite ids to run; all when empty.
    pub suites: Vec<u32>,
}

/// Switches between alternative readings and conventions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Modes {
    pub gaussian: GaussianMode,
    pub cross_term: Option<CrossTerm>,
    pub velocity: VelocityConvention,
    pub strategy: StrategyMode,
    pub scale: Scale,
    pub scheme: FkScheme,
}

/// The file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub model: ModelSection,
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub hjb: HjbSection,
    #[serde(default)]
    pub theta: ThetaSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub modes: Modes,
}

/// A validated configuration with every default made explicit. Its JSON form
/// uses the same keys as the input file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub model: Params,
    pub initial: School,
    pub simulate: SimulateSection,
    pub grid: GridSection,
    pub hjb: HjbSection,
    pub theta: ThetaSection,
    pub strategy: StrategySection,
    pub field: FieldSection,
    pub verify: VerifySection,
    pub modes: Modes,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses and validates a TOML document. Schema errors name the path of the
/// offending key.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    parse_with_overrides(text, None, &[])
}

/// [`parse_config`] with a seed override and `KEY=VALUE` mode overrides
/// applied before validation.
pub fn parse_with_overrides(text: &str, seed: Option<u64>, modes: &[String]) -> Result<RunConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| invalid(format!("malformed TOML: {}", e.message())))?;
    let mut raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().message().to_string();
        if path == "." {
            invalid(msg)
        } else {
            invalid(format!("{path}: {msg}"))
        }
    })?;
    if let Some(s) = seed {
        raw.seed = s;
    }
    for m in modes {
        apply_mode(&mut raw.modes, m)?;
    }
    resolve(raw)
}

fn mode_value<T: DeserializeOwned>(key: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|e| invalid(format!("--mode {key}: {e}")))
}

/// Applies one `KEY=VALUE` override. Keys may use `-` or `_`.
pub fn apply_mode(modes: &mut Modes, spec: &str) -> Result<(), CliError> {
    let (key, value) = spec.split_once('=').ok_or_else(|| invalid(format!("--mode expects KEY=VALUE, got {spec:?}")))?;
    let key = key.trim().replace('-', "_");
    let value = value.trim();
    match key.as_str() {
        "gaussian" => modes.gaussian = mode_value(&key, value)?,
        "cross_term" => modes.cross_term = Some(mode_value(&key, value)?),
        "velocity" => modes.velocity = mode_value(&key, value)?,
        "strategy" => modes.strategy = mode_value(&key, value)?,
        "scale" => modes.scale = mode_value(&key, value)?,
        "scheme" => modes.scheme = mode_value(&key, value)?,
        _ => {
            return Err(invalid(format!(
                "unknown mode {key:?}; expected one of gaussian, cross-term, velocity, strategy, scale, scheme"
            )))
        }
    }
    Ok(())
}

fn resolve(raw: RawConfig) -> Result<RunConfig, CliError> {
    if raw.schema_version != SCHEMA_VERSION {
        return Err(invalid(format!(
            "schema_version: unsupported version {}, expected {SCHEMA_VERSION}",
            raw.schema_version
        )));
    }
    let mut model = raw.model.resolve();
    if let Some(ct) = raw.modes.cross_term {
        model.cross_term = ct;
    }
    // The ω check belongs to the pipelines that use ω.
    model.validate_basic()?;
    let initial = match raw.initial {
        Some(s) => SchoolState::new(s.time, s.positions, s.velocities),
        None => default_school(model.n_fish),
    };
    initial.validate(&model)?;
    let mut modes = raw.modes;
    modes.cross_term = Some(model.cross_term);

    let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(invalid(msg)) };
    check(raw.simulate.n_paths >= 1, "simulate.n_paths must be at least 1")?;
    check(raw.simulate.control.is_finite(), "simulate.control must be finite")?;
    for (name, ax) in [("grid.x", &raw.grid.x), ("grid.v", &raw.grid.v)] {
        ax.validate().map_err(|e| invalid(format!("{name}: {e}")))?;
    }
    check(raw.grid.n_time_steps != Some(0), "grid.n_time_steps must be at least 1")?;
    check(raw.grid.terminal.is_finite() && raw.grid.terminal > 0.0, "grid.terminal must be positive")?;
    check(raw.hjb.stability > 0.0, "hjb.stability must be positive")?;
    check(raw.hjb.kernel_nodes >= 2, "hjb.kernel_nodes must be at least 2")?;
    check(raw.theta.n_paths >= 1, "theta.n_paths must be at least 1")?;
    check(!raw.theta.probes.is_empty(), "theta.probes must not be empty")?;
    check(raw.theta.probes.iter().flatten().all(|c| c.is_finite()), "theta.probes must be finite")?;
    check(raw.strategy.denominator_epsilon >= 0.0, "strategy.denominator_epsilon must be nonnegative")?;
    if let Some(f) = raw.strategy.cases_fish {
        check(f < model.n_fish, "strategy.cases_fish must be a fish index")?;
    }
    check(raw.field.truncation >= 1, "field.truncation must be at least 1")?;
    check(raw.field.n_points >= 1, "field.n_points must be at least 1")?;
    if let Some(bad) = raw.verify.suites.iter().find(|id| !SUITE_IDS.contains(id)) {
        return Err(invalid(format!("verify.suites: unknown suite {bad}; ids run from 1 to {}", SUITE_IDS.len())));
    }

    Ok(RunConfig {
        schema_version: raw.schema_version,
        seed: raw.seed,
        model,
        initial,
        simulate: raw.simulate,
        grid: raw.grid,
        hjb: raw.hjb,
        theta: raw.theta,
        strategy: raw.strategy,
        field: raw.field,
        verify: raw.verify,
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nseed = 42\n[model]\nn_fish = 2\nhorizon = 1.0\ndt = 0.01\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.model, {
            let mut p = ModelParams::new(2);
            p.horizon = 1.0;
            p.dt = 0.01;
            p
        });
        assert_eq!(c.initial.positions, vec![1.0, 2.0]);
        assert_eq!(c.simulate, SimulateSection::default());
        assert_eq!(c.modes.cross_term, Some(CrossTerm::Paper));
    }

    #[test]
    fn zero_dt_rejected() {
        let e = parse_config(&MINIMAL.replace("dt = 0.01", "dt = 0.0")).unwrap_err();
        assert!(e.to_string().contains("dt must be positive"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = parse_config(&format!("{MINIMAL}foo = 1\n")).unwrap_err();
        assert!(e.to_string().contains("foo"), "{e}");
        let e = parse_config(&format!("{MINIMAL}[hjb.reward]\nzz = 2.0\n")).unwrap_err();
        let s = e.to_string();
        assert!(s.contains("hjb.reward") && s.contains("zz"), "{s}");
    }

    #[test]
    fn missing_required_key() {
        let e = parse_config(&MINIMAL.replace("horizon = 1.0\n", "")).unwrap_err();
        assert!(e.to_string().contains("horizon"), "{e}");
        let e = parse_config(&MINIMAL.replace("seed = 42\n", "")).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn wrong_type_names_path() {
        let e = parse_config(&MINIMAL.replace("n_fish = 2", "n_fish = \"two\"")).unwrap_err();
        assert!(e.to_string().contains("model.n_fish"), "{e}");
    }

    #[test]
    fn overrides() {
        let c = parse_with_overrides(MINIMAL, Some(7), &["strategy=paper-verbatim".into(), "cross-term=conventional".into()])
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.modes.strategy, StrategyMode::PaperVerbatim);
        assert_eq!(c.model.cross_term, CrossTerm::Conventional);
        assert!(parse_with_overrides(MINIMAL, None, &["velocity=sideways".into()]).is_err());
        assert!(parse_with_overrides(MINIMAL, None, &["colour=red".into()]).is_err());
        assert!(parse_with_overrides(MINIMAL, None, &["scale".into()]).is_err());
    }

    #[test]
    fn schema_version_checked() {
        let e = parse_config(&MINIMAL.replace("schema_version = 1", "schema_version = 9")).unwrap_err();
        assert!(e.to_string().contains("schema_version"), "{e}");
    }
}
