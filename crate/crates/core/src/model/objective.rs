use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::model::{ModelParams, RewardSpec, SchoolState};
use crate::scalar::Real;
use crate::sde::{integrate_path, DynamicsSpec};

/// A feedback control map `(s, school) ↦ u` for every fish.
pub trait Policy<T>: Sync {
    /// Writes one control per fish into `out`.
    fn controls(&self, s: T, state: &SchoolState<T>, out: &mut [T]) -> Result<()>;
}

/// The same control for every fish at all times.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy<T>(pub T);

impl<T: Real> Policy<T> for ConstantPolicy<T> {
    fn controls(&self, _s: T, _state: &SchoolState<T>, out: &mut [T]) -> Result<()> {
        out.fill(self.0);
        Ok(())
    }
}

/// Per-fish control from a closure `(s, school, fish) ↦ u`.
#[derive(Clone)]
pub struct FnPolicy<T>(pub Arc<dyn Fn(T, &SchoolState<T>, usize) -> T + Send + Sync>);

impl<T: Real> FnPolicy<T> {
    pub fn new(f: impl Fn(T, &SchoolState<T>, usize) -> T + Send + Sync + 'static) -> Self {
        FnPolicy(Arc::new(f))
    }
}

impl<T: Real> Policy<T> for FnPolicy<T> {
    fn controls(&self, s: T, state: &SchoolState<T>, out: &mut [T]) -> Result<()> {
        for (i, u) in out.iter_mut().enumerate() {
            *u = (self.0)(s, state, i);
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the school objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveEstimate<T> {
    pub mean: T,
    pub stderr: T,
    pub n_paths: usize,
}

/// Objective value of every path, in path order.
pub(crate) fn path_objectives<T: Real>(
    dynamics: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    reward: &RewardSpec<T>,
    policy: &dyn Policy<T>,
    initial: &SchoolState<T>,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<T>> {
    params.validate_basic()?;
    initial.validate(params)?;
    ensure(n_paths >= 1, || "n_paths must be at least 1".into())?;
    let n = params.n_fish;
    let dt = params.dt;
    // Exact integral of e^{-ρs} over one step, divided by e^{-ρ s_k}.
    let step_mass: Vec<T> = (0..n)
        .map(|i| {
            let r = params.discount(i);
            -(-r * dt).exp_m1() / r
        })
        .collect();
    let scale: Vec<T> = (0..n).map(|i| params.weight(i) * params.survival(i)).collect();

    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut total = T::zero();
            let mut prev: Vec<T> = vec![T::zero(); n];
            integrate_path(dynamics, params, policy, initial, params.horizon, dt, seed, p, None, |step, state, u| {
                for i in 0..n {
                    let h = reward.eval_unchecked(state.time, state.positions[i], state.velocities[i], u[i]);
                    if step > 0 {
                        let s_prev = initial.time + T::count(step - 1) * dt;
                        let disc = (-params.discount(i) * s_prev).exp();
                        total = total + scale[i] * disc * step_mass[i] * T::half() * (prev[i] + h);
                    }
                    prev[i] = h;
                }
                if total.is_finite() {
                    Ok(())
                } else {
                    Err(crate::Error::Diverged { path: p, step })
                }
            })?;
            Ok(total)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn mean_stderr<T: Real>(values: &[T]) -> (T, T) {
    let n = T::count(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    if values.len() < 2 {
        return (mean, T::zero());
    }
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - T::one())).sqrt();
    (mean, sd / n.sqrt())
}

/// Estimates `E₀[∫₀ᵗ Σᵢ e^{−ρⁱs} αⁱ Hⁱ h(s, xⁱ, vⁱ, uⁱ) ds]` over `n_paths`
/// simulated school trajectories.
///
/// The discount factor is integrated exactly on each step and the reward by
/// the trapezoid rule, so a constant reward is integrated without error.
/// Paths are independent of thread scheduling; the reduction runs in path
/// order.
pub fn estimate_objective<T: Real>(
    dynamics: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    reward: &RewardSpec<T>,
    policy: &dyn Policy<T>,
    initial: &SchoolState<T>,
    n_paths: usize,
    seed: u64,
) -> Result<ObjectiveEstimate<T>> {
    let values = path_objectives(dynamics, params, reward, policy, initial, n_paths, seed)?;
    let (mean, stderr) = mean_stderr(&values);
    Ok(ObjectiveEstimate { mean, stderr, n_paths })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    AWins,
    BWins,
    Indistinguishable,
}

/// Empirical equilibrium comparison of two policies under common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyComparison<T> {
    pub a: ObjectiveEstimate<T>,
    pub b: ObjectiveEstimate<T>,
    /// `mean(A) − mean(B)`.
    pub gap: T,
    /// Standard error of the paired per-path differences.
    pub gap_stderr: T,
    pub verdict: Verdict,
    /// The larger of the two estimates falls below `reward_floor`.
    pub below_floor: bool,
}

/// Runs both policies on the same noise and reports which attains the larger
/// objective. The gap counts as significant when it exceeds three standard
/// errors of the paired differences.
#[allow(clippy::too_many_arguments)]
pub fn compare_policies<T: Real>(
    dynamics: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    reward: &RewardSpec<T>,
    policy_a: &dyn Policy<T>,
    policy_b: &dyn Policy<T>,
    initial: &SchoolState<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PolicyComparison<T>> {
    let va = path_objectives(dynamics, params, reward, policy_a, initial, n_paths, seed)?;
    let vb = path_objectives(dynamics, params, reward, policy_b, initial, n_paths, seed)?;
    let diff: Vec<T> = va.iter().zip(&vb).map(|(&a, &b)| a - b).collect();
    let (ma, sa) = mean_stderr(&va);
    let (mb, sb) = mean_stderr(&vb);
    let (gap, gap_stderr) = mean_stderr(&diff);
    let verdict = if gap == T::zero() || gap.abs() <= T::lit(3.0) * gap_stderr {
        Verdict::Indistinguishable
    } else if gap > T::zero() {
        Verdict::AWins
    } else {
        Verdict::BWins
    };
    let best = ma.max(mb);
    Ok(PolicyComparison {
        a: ObjectiveEstimate { mean: ma, stderr: sa, n_paths },
        b: ObjectiveEstimate { mean: mb, stderr: sb, n_paths },
        gap,
        gap_stderr,
        verdict,
        below_floor: best < params.reward_floor,
    })
}
