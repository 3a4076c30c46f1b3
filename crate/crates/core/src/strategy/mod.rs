//! The worked example: exponential ansatz for `g`, the assembled `f`, its
//! first-order condition in the control and the closed-form strategy.
//!
//! Sums over the school inside fish `i`'s own formulas run over neighbours
//! `j ≠ i`. Single differences `(x^i − x^j)`, `(v^i − v^j)` refer to one
//! designated reference neighbour per fish (by default the nearest in
//! position, ties to the lowest index).

mod cases;

pub use cases::{case_diagnostics, CaseDiagnostics, CaseI, CaseII, CaseIII, CaseIV};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::feynman::{GAnsatz, GJet};
use crate::lqg::{exp_checked, LqgField};
use crate::model::{discounted_running_weight, ModelParams, Policy, SchoolState};
use crate::scalar::{sqrt_eight_thirds, Real};
use crate::sde::{Coefficients, FishCoefficients};

/// Which expression the closed-form strategy evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyMode {
    /// The exact root of the first-order condition.
    #[default]
    FocConsistent,
    /// The printed closed form: first brace term `(λλ₂/I)v^i(v^j − v^i)`
    /// without `ψ`, second term unchanged.
    PaperVerbatim,
}

/// Which partial derivatives of `g` enter `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialReading {
    /// The partials as they appear inside the assembled `f`:
    /// `g_x = g·b·Δv`, `g_v = g·A`, `g_xx = g·s·b·Δv`, `g_vv = g·A²`,
    /// `g_xv = g·b·(1 + A)` with `b = λλ₂ψ/I`, `A = sλ₁ + s·b·Δx`.
    #[default]
    Assembled,
    /// The list displayed right after the ansatz (`g_xx` squared, `g_vv`
    /// not squared).
    Displayed,
    /// True derivatives of the ansatz.
    Exact,
}

/// Whether the `g_v μ₂` block of `f` carries the control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftReading {
    /// `μ₂ = u·S`, consistent with the velocity dynamics.
    #[default]
    WithControl,
    /// `μ₂ = S`, the block exactly as assembled.
    Printed,
}

/// Everything the example needs for one decision epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Example1Context<T> {
    pub params: ModelParams<T>,
    pub school: SchoolState<T>,
    /// Frozen field value `k^i(l)` shared by the school.
    pub k: T,
    /// Reference neighbour of each fish.
    pub references: Vec<usize>,
    pub mode: StrategyMode,
    pub partials: PartialReading,
    pub drift: DriftReading,
    /// Smallest admissible `|2αHxv|`.
    pub denominator_epsilon: T,
}

/// Nearest neighbour of every fish by `|x^i − x^j|`, ties to the lowest index.
pub fn nearest_neighbours<T: Real>(school: &SchoolState<T>) -> Vec<usize> {
    let x = &school.positions;
    (0..x.len())
        .map(|i| {
            let mut best = usize::MAX;
            let mut dist = T::infinity();
            for (j, &xj) in x.iter().enumerate() {
                if j != i && (x[i] - xj).abs() < dist {
                    dist = (x[i] - xj).abs();
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// School sums seen by one fish at a trial state `(x, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchoolTerms<T> {
    /// `Σ (x − x^j)(v − v^j)`.
    pub cross: T,
    /// `Σ (x − x^j)`.
    pub sum_dx: T,
    /// `Σ (v − v^j)`.
    pub sum_dv: T,
    /// `S = (λ/I) Σ ψ|x − x^j|(v − v^j)`.
    pub alignment: T,
    /// `x − x^r`, `v − v^r` against the reference neighbour.
    pub dx_ref: T,
    pub dv_ref: T,
}

impl<T: Real> Example1Context<T> {
    /// Context with nearest-neighbour references and default readings.
    pub fn new(params: ModelParams<T>, school: SchoolState<T>, k: T) -> Result<Self> {
        let references = nearest_neighbours(&school);
        let ctx = Example1Context {
            params,
            school,
            k,
            references,
            mode: StrategyMode::default(),
            partials: PartialReading::default(),
            drift: DriftReading::default(),
            denominator_epsilon: T::lit(1e-12),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    /// Context whose `k` is `field` evaluated at `l`.
    pub fn with_field(params: ModelParams<T>, school: SchoolState<T>, field: &LqgField<T>, l: T) -> Result<Self> {
        field.validate()?;
        Self::new(params, school, field.eval(l))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate_basic()?;
        self.school.validate(&self.params)?;
        let n = self.params.n_fish;
        ensure(n >= 2, || "the example needs at least two fish".into())?;
        ensure(self.k.is_finite(), || "field value k must be finite".into())?;
        ensure(self.references.len() == n, || "one reference neighbour per fish required".into())?;
        for (i, &r) in self.references.iter().enumerate() {
            ensure(r < n && r != i, || format!("reference neighbour of fish {i} must be another fish (got {r})"))?;
        }
        ensure(self.denominator_epsilon >= T::zero(), || "denominator_epsilon must be nonnegative".into())
    }

    fn check_fish(&self, fish: usize) -> Result<()> {
        ensure(fish < self.params.n_fish, || format!("fish index {fish} out of range"))
    }

    /// `b = λλ₂ψ / I`.
    fn b(&self) -> T {
        self.params.coupling * self.params.mult2 * self.params.comm_rate / T::count(self.params.n_fish)
    }

    pub fn terms(&self, fish: usize, x: T, v: T) -> SchoolTerms<T> {
        let p = &self.params;
        let mut t = SchoolTerms {
            cross: T::zero(),
            sum_dx: T::zero(),
            sum_dv: T::zero(),
            alignment: T::zero(),
            dx_ref: T::zero(),
            dv_ref: T::zero(),
        };
        let mut align = T::zero();
        for (j, (&xj, &vj)) in self.school.positions.iter().zip(&self.school.velocities).enumerate() {
            if j == fish {
                continue;
            }
            let (dx, dv) = (x - xj, v - vj);
            t.cross = t.cross + dx * dv;
            t.sum_dx = t.sum_dx + dx;
            t.sum_dv = t.sum_dv + dv;
            align = align + dx.abs() * dv;
        }
        t.alignment = p.coupling / T::count(p.n_fish) * p.comm_rate * align;
        let r = self.references[fish];
        t.dx_ref = x - self.school.positions[r];
        t.dv_ref = v - self.school.velocities[r];
        t
    }

    /// Exponent of the ansatz.
    fn exponent(&self, s: T, v: T, t: &SchoolTerms<T>) -> T {
        let p = &self.params;
        s * p.mult1 * v + s * self.b() * t.cross + p.mult3 * sqrt_eight_thirds::<T>() * self.k
    }

    /// `A = sλ₁ + s·b·(x − x^r)`.
    fn a_coef(&self, s: T, t: &SchoolTerms<T>) -> T {
        s * self.params.mult1 + s * self.b() * t.dx_ref
    }

    /// `g` at fish `fish`'s trial state, with overflow guard.
    pub fn g_value(&self, fish: usize, s: T, x: T, v: T) -> Result<T> {
        self.check_fish(fish)?;
        let t = self.terms(fish, x, v);
        exp_checked(self.exponent(s, v, &t))
    }

    /// `g` and the partials selected by `reading`.
    pub fn g_jet(&self, fish: usize, s: T, x: T, v: T, reading: PartialReading) -> Result<GJet<T>> {
        let g = self.g_value(fish, s, x, v)?;
        let t = self.terms(fish, x, v);
        Ok(jet_from(self, g, s, v, &t, reading))
    }

    /// `μ₂` of the example at a trial state.
    fn mu2(&self, t: &SchoolTerms<T>, u: T) -> T {
        match self.drift {
            DriftReading::WithControl => u * t.alignment,
            DriftReading::Printed => t.alignment,
        }
    }
}

fn jet_from<T: Real>(ctx: &Example1Context<T>, g: T, s: T, v: T, t: &SchoolTerms<T>, reading: PartialReading) -> GJet<T> {
    let p = &ctx.params;
    let b = ctx.b();
    let ds = g * (p.mult1 * v + b * t.cross);
    match reading {
        PartialReading::Exact => {
            let ex = s * b * t.sum_dv;
            let ev = s * p.mult1 + s * b * t.sum_dx;
            let exv = s * b * T::count(p.n_fish - 1);
            GJet { value: g, ds, dx: g * ex, dv: g * ev, dxx: g * ex * ex, dxv: g * (ex * ev + exv), dvv: g * ev * ev }
        }
        PartialReading::Assembled | PartialReading::Displayed => {
            let a = ctx.a_coef(s, t);
            let one = T::one();
            let (dxx, dvv) = if reading == PartialReading::Assembled {
                (g * s * b * t.dv_ref, g * a * a)
            } else {
                let e = s * b * t.dv_ref;
                (g * e * e, g * a)
            };
            GJet { value: g, ds, dx: g * b * t.dv_ref, dv: g * a, dxx, dxv: g * b * (one + a), dvv }
        }
    }
}

/// `g` with its true partials (the ansatz is smooth, so these are analytic).
pub fn g_ansatz<T: Real>(ctx: &Example1Context<T>, fish: usize, s: T, x: T, v: T) -> Result<GJet<T>> {
    ctx.g_jet(fish, s, x, v, PartialReading::Exact)
}

/// The assembled `f` for fish `fish` at trial state `(x, v)` and control `u`:
/// reward term, `g + g_s`, `g_x·uv`, `g_v·μ₂` and the second-order block,
/// with partials per `ctx.partials` and `μ₂` per `ctx.drift`.
pub fn f_example<T: Real>(ctx: &Example1Context<T>, fish: usize, s: T, x: T, v: T, u: T) -> Result<T> {
    let g = ctx.g_jet(fish, s, x, v, ctx.partials)?;
    let t = ctx.terms(fish, x, v);
    let p = &ctx.params;
    let reward = discounted_running_weight(p, fish, s) * x * v * u * u;
    let block = p.diffusion_example();
    let f = reward + g.value + g.ds + g.dx * u * v + g.dv * ctx.mu2(&t, u) + block.second_order(g.dxx, g.dxv, g.dvv);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::numerical(format!("f not finite for fish {fish} at (s={s}, x={x}, v={v}, u={u})")))
    }
}

/// `∂f/∂u`. Under the default readings this is
/// `2u·e^{−ρs}αH·xv + g·b·v·(v − v^r) + g·A·S`.
pub fn foc_residual<T: Real>(ctx: &Example1Context<T>, fish: usize, s: T, x: T, v: T, u: T) -> Result<T> {
    let (lin, slope) = foc_parts(ctx, fish, s, x, v)?;
    Ok(slope * u + lin)
}

/// `∂f/∂u = slope·u + lin`.
fn foc_parts<T: Real>(ctx: &Example1Context<T>, fish: usize, s: T, x: T, v: T) -> Result<(T, T)> {
    let g = ctx.g_jet(fish, s, x, v, ctx.partials)?;
    let t = ctx.terms(fish, x, v);
    let w = discounted_running_weight(&ctx.params, fish, s);
    let slope = T::two() * w * x * v;
    let drift = match ctx.drift {
        DriftReading::WithControl => g.dv * t.alignment,
        DriftReading::Printed => T::zero(),
    };
    Ok((g.dx * v + drift, slope))
}

/// Pieces of the closed-form strategy of one fish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyTerms<T> {
    pub fish: usize,
    pub reference: usize,
    pub u_star: T,
    /// `T₂ = b·v·(v − v^r)`.
    pub t2: T,
    /// `T₃ = A·S`.
    pub t3: T,
    /// `2αH·xv`.
    pub denominator: T,
    pub mode: StrategyMode,
}

/// Closed-form strategy of fish `fish` at the school's current state.
///
/// Fails with a numerical error when `|2αH·xv|` is below
/// `ctx.denominator_epsilon`.
pub fn closed_form_strategy<T: Real>(ctx: &Example1Context<T>, s: T, fish: usize) -> Result<T> {
    strategy_terms(ctx, s, fish).map(|t| t.u_star)
}

pub fn strategy_terms<T: Real>(ctx: &Example1Context<T>, s: T, fish: usize) -> Result<StrategyTerms<T>> {
    ctx.check_fish(fish)?;
    let p = &ctx.params;
    let (x, v) = (ctx.school.positions[fish], ctx.school.velocities[fish]);
    let denominator = T::two() * p.weight(fish) * p.survival(fish) * x * v;
    if !(denominator.abs() > ctx.denominator_epsilon) || !denominator.is_finite() {
        return Err(Error::numerical(format!(
            "strategy singular at αHxv ≈ 0 for fish {fish} (|2αHxv| = {})",
            denominator.abs()
        )));
    }
    let t = ctx.terms(fish, x, v);
    let g = ctx.g_value(fish, s, x, v)?;
    let a = ctx.a_coef(s, &t);
    let b = ctx.b();
    let t2 = b * v * t.dv_ref;
    let t3 = a * t.alignment;
    let growth = exp_checked(p.discount(fish) * s)?;
    let u_star = match ctx.mode {
        StrategyMode::FocConsistent => {
            let (lin, slope) = foc_parts(ctx, fish, s, x, v)?;
            -lin / slope
        }
        StrategyMode::PaperVerbatim => {
            let first = p.coupling * p.mult2 / T::count(p.n_fish) * v * (-t.dv_ref);
            growth * g / denominator * (first + t3)
        }
    };
    if !u_star.is_finite() {
        return Err(Error::numerical(format!("strategy of fish {fish} is not finite")));
    }
    // Report an exact zero as +0.
    let u_star = u_star + T::zero();
    Ok(StrategyTerms { fish, reference: ctx.references[fish], u_star, t2, t3, denominator, mode: ctx.mode })
}

/// Strategy of every fish.
pub fn strategy_report<T: Real>(ctx: &Example1Context<T>, s: T) -> Result<Vec<StrategyTerms<T>>> {
    (0..ctx.params.n_fish).map(|i| strategy_terms(ctx, s, i)).collect()
}

/// `(σ₁, √σ₂)` with the configured correlation, as the example's velocity
/// noise is `√σ₂ dB₂`.
trait ExampleDiffusion<T> {
    fn diffusion_example(&self) -> crate::model::DiffusionBlock<T>;
}

impl<T: Real> ExampleDiffusion<T> for ModelParams<T> {
    fn diffusion_example(&self) -> crate::model::DiffusionBlock<T> {
        crate::model::DiffusionBlock::new(self.sigma1, self.sigma2.sqrt(), self.corr, self.cross_term)
    }
}

/// The ansatz of one fish as a [`GAnsatz`], with partials per `ctx.partials`.
pub struct Example1Ansatz<'a, T> {
    pub ctx: &'a Example1Context<T>,
    pub fish: usize,
}

impl<T: Real> GAnsatz<T> for Example1Ansatz<'_, T> {
    fn value(&self, s: T, x: T, v: T) -> T {
        let t = self.ctx.terms(self.fish, x, v);
        self.ctx.exponent(s, v, &t).exp()
    }

    fn jet(&self, s: T, x: T, v: T) -> GJet<T> {
        let t = self.ctx.terms(self.fish, x, v);
        let g = self.value(s, x, v);
        jet_from(self.ctx, g, s, v, &t, self.ctx.partials)
    }
}

/// The example's coefficients for one fish with the rest of the school fixed:
/// `μ₁ = uv`, `μ₂ = u·S` (or `S`), `σ₁`, `√σ₂`.
pub struct Example1Coefficients<'a, T> {
    pub ctx: &'a Example1Context<T>,
    pub fish: usize,
}

impl<T: Real> FishCoefficients<T> for Example1Coefficients<'_, T> {
    fn at(&self, _s: T, x: T, v: T, u: T) -> Coefficients<T> {
        let t = self.ctx.terms(self.fish, x, v);
        let p = &self.ctx.params;
        Coefficients { mu1: u * v, mu2: self.ctx.mu2(&t, u), sigma1: p.sigma1, sigma2: p.sigma2.sqrt() }
    }
}

/// Feedback policy applying the closed-form strategy to the current school.
/// References are recomputed from the school at every step.
#[derive(Debug, Clone)]
pub struct ClosedFormPolicy<T> {
    pub params: ModelParams<T>,
    pub k: T,
    pub mode: StrategyMode,
    pub partials: PartialReading,
    pub drift: DriftReading,
    pub denominator_epsilon: T,
}

impl<T: Real> ClosedFormPolicy<T> {
    pub fn from_context(ctx: &Example1Context<T>) -> Self {
        ClosedFormPolicy {
            params: ctx.params.clone(),
            k: ctx.k,
            mode: ctx.mode,
            partials: ctx.partials,
            drift: ctx.drift,
            denominator_epsilon: ctx.denominator_epsilon,
        }
    }
}

impl<T: Real> Policy<T> for ClosedFormPolicy<T> {
    fn controls(&self, s: T, state: &SchoolState<T>, out: &mut [T]) -> Result<()> {
        let ctx = Example1Context {
            params: self.params.clone(),
            school: state.clone(),
            k: self.k,
            references: nearest_neighbours(state),
            mode: self.mode,
            partials: self.partials,
            drift: self.drift,
            denominator_epsilon: self.denominator_epsilon,
        };
        for (i, u) in out.iter_mut().enumerate() {
            *u = closed_form_strategy(&ctx, s, i)?;
        }
        Ok(())
    }
}
