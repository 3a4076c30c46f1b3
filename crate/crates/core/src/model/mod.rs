//! Model parameters, school state and the running reward of the migration game.

mod objective;
mod reward;

pub use objective::{
    compare_policies, estimate_objective, ConstantPolicy, FnPolicy, ObjectiveEstimate, Policy,
    PolicyComparison, Verdict,
};
pub use reward::{discounted_running_weight, evaluate_reward, RewardFn, RewardSpec};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::Real;

/// Default threshold below which `ω` counts as degenerate.
pub const OMEGA_EPSILON: f64 = 1e-12;

/// A per-fish quantity: one shared value or one value per school member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerFish<T> {
    Shared(T),
    Each(Vec<T>),
}

impl<T: Copy> PerFish<T> {
    pub fn get(&self, i: usize) -> T {
        match self {
            PerFish::Shared(x) => *x,
            PerFish::Each(v) => v[i],
        }
    }

    fn len_ok(&self, n: usize) -> bool {
        match self {
            PerFish::Shared(_) => true,
            PerFish::Each(v) => v.len() == n,
        }
    }

    fn values(&self) -> Vec<T> {
        match self {
            PerFish::Shared(x) => vec![*x],
            PerFish::Each(v) => v.clone(),
        }
    }

    /// Applies `f` to every stored value.
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> PerFish<U> {
        match self {
            PerFish::Shared(x) => PerFish::Shared(f(*x)),
            PerFish::Each(v) => PerFish::Each(v.iter().map(|x| f(*x)).collect()),
        }
    }
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lower: T, upper: T) -> Self {
        Interval { lower, upper }
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Mirrors `x` back into the interval.
    pub fn reflect(&self, mut x: T) -> T {
        let width = self.upper - self.lower;
        if width <= T::zero() {
            return self.lower;
        }
        for _ in 0..8 {
            if x > self.upper {
                x = self.upper - (x - self.upper);
            } else if x < self.lower {
                x = self.lower + (self.lower - x);
            } else {
                return x;
            }
        }
        x.max(self.lower).min(self.upper)
    }
}

/// Which form of the mixed diffusion term is used.
///
/// `Paper` uses `ρ·σ₁³` as the x–v covariance (so the generator carries
/// `2ρσ₁³ ∂²/∂x∂v`); `Conventional` uses `ρ·σ₁σ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossTerm {
    #[default]
    Paper,
    Conventional,
}

/// Constant diffusion block of the `(x, v)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionBlock<T> {
    pub sigma1: T,
    pub sigma2: T,
    pub corr: T,
    pub cross_term: CrossTerm,
}

impl<T: Real> DiffusionBlock<T> {
    pub fn new(sigma1: T, sigma2: T, corr: T, cross_term: CrossTerm) -> Self {
        DiffusionBlock { sigma1, sigma2, corr, cross_term }
    }

    /// Variance rate of `x`.
    pub fn xx(&self) -> T {
        self.sigma1 * self.sigma1
    }

    /// Variance rate of `v`.
    pub fn vv(&self) -> T {
        self.sigma2 * self.sigma2
    }

    /// Covariance rate of `(x, v)`.
    pub fn xv(&self) -> T {
        match self.cross_term {
            CrossTerm::Paper => self.corr * self.sigma1 * self.sigma1 * self.sigma1,
            CrossTerm::Conventional => self.corr * self.sigma1 * self.sigma2,
        }
    }

    /// `ω = R [σ₁² + 2·cov + σ₂²]`.
    pub fn omega(&self, quad_cost: T) -> T {
        quad_cost * (self.xx() + T::two() * self.xv() + self.vv())
    }

    /// `½ (σ₁² h_xx + 2·cov·h_xv + σ₂² h_vv)`.
    pub fn second_order(&self, hxx: T, hxv: T, hvv: T) -> T {
        T::half() * (self.xx() * hxx + T::two() * self.xv() * hxv + self.vv() * hvv)
    }

    /// Lower Cholesky factor `(l11, l21, l22)` of the covariance rate matrix.
    ///
    /// The x-noise is `l11·Z₁` and the v-noise `l21·Z₁ + l22·Z₂`. Fails when
    /// the printed cross term does not describe a valid covariance.
    pub fn loading(&self) -> Result<(T, T, T)> {
        let l11 = self.sigma1.abs();
        let cov = self.xv();
        let l21 = if l11 > T::zero() {
            cov / l11
        } else if cov == T::zero() {
            T::zero()
        } else {
            return Err(Error::validation(
                "diffusion block: nonzero cross covariance with zero position diffusion",
            ));
        };
        let rem = self.vv() - l21 * l21;
        let tol = T::epsilon() * T::lit(64.0) * self.vv().max(T::one());
        if rem < -tol {
            return Err(Error::validation(format!(
                "diffusion block is not positive semidefinite (sigma1={}, sigma2={}, corr={}, cross={:?})",
                self.sigma1, self.sigma2, self.corr, self.cross_term
            )));
        }
        Ok((l11, l21, rem.max(T::zero()).sqrt()))
    }
}

/// Every scalar constant of the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ModelParams<T> {
    /// Number of fish in the school, `I`.
    pub n_fish: usize,
    /// Discount rate `ρ^i ∈ (0, 1)`.
    pub discount: PerFish<T>,
    /// Objective weight `α^i`.
    pub weight: PerFish<T>,
    /// Survival value `H₀₁^i ∈ [0, 1]`, held constant over a run.
    pub survival: PerFish<T>,
    /// Communication rate `ψ` (constant).
    pub comm_rate: T,
    /// Coupling strength `λ`.
    pub coupling: T,
    /// Lagrange multipliers `λ₁, λ₂, λ₃`.
    pub mult1: T,
    pub mult2: T,
    pub mult3: T,
    /// Diffusion constants `σ₁`, `σ₂`.
    pub sigma1: T,
    pub sigma2: T,
    /// State correlation `ρ ∈ (−1, 1)` of the mixed diffusion term.
    pub corr: T,
    /// Quadratic control cost `R > 0`.
    pub quad_cost: T,
    pub horizon: T,
    pub dt: T,
    /// Lower bound the objective must reach.
    pub reward_floor: T,
    #[serde(default)]
    pub cross_term: CrossTerm,
    /// Optional reachable set per fish; positions are reflected at its edges.
    #[serde(default)]
    pub reachable: Option<PerFish<Interval<T>>>,
    #[serde(default = "default_omega_epsilon")]
    pub omega_epsilon: T,
}

fn default_omega_epsilon<T: Real>() -> T {
    T::lit(OMEGA_EPSILON)
}

impl<T: Real> ModelParams<T> {
    /// A valid parameter set with shared per-fish values.
    pub fn new(n_fish: usize) -> Self {
        ModelParams {
            n_fish,
            discount: PerFish::Shared(T::lit(0.1)),
            weight: PerFish::Shared(T::one()),
            survival: PerFish::Shared(T::one()),
            comm_rate: T::one(),
            coupling: T::one(),
            mult1: T::zero(),
            mult2: T::zero(),
            mult3: T::zero(),
            sigma1: T::zero(),
            sigma2: T::zero(),
            corr: T::zero(),
            quad_cost: T::one(),
            horizon: T::one(),
            dt: T::lit(0.01),
            reward_floor: T::zero(),
            cross_term: CrossTerm::Paper,
            reachable: None,
            omega_epsilon: default_omega_epsilon(),
        }
    }

    pub fn discount(&self, i: usize) -> T {
        self.discount.get(i)
    }

    pub fn weight(&self, i: usize) -> T {
        self.weight.get(i)
    }

    pub fn survival(&self, i: usize) -> T {
        self.survival.get(i)
    }

    /// The diffusion block `(σ₁, σ₂, ρ)` as entered in the HJB operator.
    pub fn diffusion(&self) -> DiffusionBlock<T> {
        DiffusionBlock::new(self.sigma1, self.sigma2, self.corr, self.cross_term)
    }

    /// `ω = R [σ₁² + 2ρσ₁³ + σ₂²]` (or the conventional cross term).
    pub fn omega(&self) -> T {
        self.diffusion().omega(self.quad_cost)
    }

    /// Checks every parameter invariant, including `|ω| > omega_epsilon`.
    pub fn validate(&self) -> Result<()> {
        self.validate_basic()?;
        let omega = self.omega();
        if omega.abs() <= self.omega_epsilon {
            return Err(Error::numerical(format!(
                "ω degenerate: |ω| = {} ≤ {}",
                omega.abs(),
                self.omega_epsilon
            )));
        }
        Ok(())
    }

    /// All invariants except the `ω` nondegeneracy requirement.
    pub fn validate_basic(&self) -> Result<()> {
        let n = self.n_fish;
        ensure(n >= 1, || "n_fish must be at least 1".into())?;
        for (name, p) in [("discount", &self.discount), ("weight", &self.weight), ("survival", &self.survival)] {
            ensure(p.len_ok(n), || format!("{name} must have n_fish = {n} entries"))?;
            ensure(p.values().iter().all(|x| x.is_finite()), || format!("{name} must be finite"))?;
        }
        ensure(
            self.discount.values().iter().all(|&r| r > T::zero() && r < T::one()),
            || "discount must lie in (0, 1)".into(),
        )?;
        ensure(
            self.survival.values().iter().all(|&h| h >= T::zero() && h <= T::one()),
            || "survival must lie in [0, 1]".into(),
        )?;
        for (name, x) in [
            ("comm_rate", self.comm_rate),
            ("coupling", self.coupling),
            ("mult1", self.mult1),
            ("mult2", self.mult2),
            ("mult3", self.mult3),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("reward_floor", self.reward_floor),
        ] {
            ensure(x.is_finite() && x >= T::zero(), || format!("{name} must be finite and nonnegative"))?;
        }
        ensure(self.corr.is_finite() && self.corr.abs() < T::one(), || "corr must lie in (-1, 1)".into())?;
        ensure(self.quad_cost.is_finite() && self.quad_cost > T::zero(), || "quad_cost must be positive".into())?;
        ensure(self.horizon.is_finite() && self.horizon > T::zero(), || "horizon must be positive".into())?;
        ensure(self.dt.is_finite() && self.dt > T::zero(), || "dt must be positive".into())?;
        ensure(self.omega_epsilon >= T::zero(), || "omega_epsilon must be nonnegative".into())?;
        if let Some(bounds) = &self.reachable {
            ensure(bounds.len_ok(n), || format!("reachable must have n_fish = {n} entries"))?;
            ensure(
                bounds.values().iter().all(|b| b.lower.is_finite() && b.upper.is_finite() && b.lower <= b.upper),
                || "reachable intervals must be finite with lower <= upper".into(),
            )?;
        }
        Ok(())
    }
}

/// Positions and relative velocities of the whole school at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolState<T> {
    pub time: T,
    pub positions: Vec<T>,
    pub velocities: Vec<T>,
}

impl<T: Real> SchoolState<T> {
    pub fn new(time: T, positions: Vec<T>, velocities: Vec<T>) -> Self {
        SchoolState { time, positions, velocities }
    }

    pub fn n_fish(&self) -> usize {
        self.positions.len()
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
            && self.positions.iter().all(|x| x.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }

    /// Checks lengths, finiteness and (when configured) the reachable set.
    pub fn validate(&self, params: &ModelParams<T>) -> Result<()> {
        ensure(
            self.positions.len() == params.n_fish && self.velocities.len() == params.n_fish,
            || format!("school state must hold n_fish = {} positions and velocities", params.n_fish),
        )?;
        ensure(self.is_finite(), || "school state must be finite".into())?;
        if let Some(bounds) = &params.reachable {
            for (i, &x) in self.positions.iter().enumerate() {
                let b = bounds.get(i);
                ensure(b.contains(x), || format!("fish {i} starts outside its reachable set"))?;
            }
        }
        Ok(())
    }

    /// Largest minus smallest relative velocity.
    pub fn velocity_spread(&self) -> T {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for &v in &self.velocities {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if self.velocities.is_empty() {
            T::zero()
        } else {
            hi - lo
        }
    }
}
