//! Euler–Maruyama integration of the coupled position / relative-velocity
//! system, with the Cucker–Smale specialization of the velocity drift.

mod checks;
mod simulate;

pub use checks::{
    check_growth_lipschitz, generator_apply, generator_mc, GeneratorEstimate, GrowthConstants, GrowthReport,
    SampleBox,
};
pub(crate) use simulate::integrate_path;
pub use simulate::{simulate, simulate_weighted, steps_for, PathEnsemble, Potential, Trajectory};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{DiffusionBlock, ModelParams, SchoolState};
use crate::scalar::Real;

/// `c(s, x, v, u)`: one drift or diffusion coefficient.
pub type CoefFn<T> = Arc<dyn Fn(T, T, T, T) -> T + Send + Sync>;

/// Sign of the velocity difference in the alignment drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityConvention {
    /// `(vⁱ − vʲ)`, as written in the model.
    #[default]
    Paper,
    /// `(vʲ − vⁱ)`, the usual Cucker–Smale alignment.
    Alignment,
}

/// Per-fish coefficients that depend only on the fish's own state.
#[derive(Clone)]
pub struct GenericDynamics<T> {
    pub mu1: CoefFn<T>,
    pub sigma1: CoefFn<T>,
    pub mu2: CoefFn<T>,
    pub sigma2: CoefFn<T>,
}

impl<T: Real> GenericDynamics<T> {
    pub fn new(
        mu1: impl Fn(T, T, T, T) -> T + Send + Sync + 'static,
        sigma1: impl Fn(T, T, T, T) -> T + Send + Sync + 'static,
        mu2: impl Fn(T, T, T, T) -> T + Send + Sync + 'static,
        sigma2: impl Fn(T, T, T, T) -> T + Send + Sync + 'static,
    ) -> Self {
        GenericDynamics { mu1: Arc::new(mu1), sigma1: Arc::new(sigma1), mu2: Arc::new(mu2), sigma2: Arc::new(sigma2) }
    }

    /// Constant drifts and diffusions.
    pub fn constant(mu1: T, sigma1: T, mu2: T, sigma2: T) -> Self {
        Self::new(move |_, _, _, _| mu1, move |_, _, _, _| sigma1, move |_, _, _, _| mu2, move |_, _, _, _| sigma2)
    }
}

/// Which state equations drive the school.
#[derive(Clone)]
pub enum DynamicsSpec<T> {
    Generic(GenericDynamics<T>),
    /// `dx = u v ds + σ₁ dB₁`, `dv = (λ/I) Σⱼ u ψ (vⁱ − vʲ) ds + √σ₂ dB₂`.
    CuckerSmale { convention: VelocityConvention },
}

impl<T> fmt::Debug for DynamicsSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsSpec::Generic(_) => f.write_str("DynamicsSpec::Generic(..)"),
            DynamicsSpec::CuckerSmale { convention } => write!(f, "DynamicsSpec::CuckerSmale({convention:?})"),
        }
    }
}

impl<T: Real> DynamicsSpec<T> {
    pub fn cucker_smale(convention: VelocityConvention) -> Self {
        DynamicsSpec::CuckerSmale { convention }
    }
}

/// Drift and diffusion of one fish at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients<T> {
    pub mu1: T,
    pub mu2: T,
    pub sigma1: T,
    pub sigma2: T,
}

/// Coefficients of a single fish as functions of its own `(s, x, v, u)`.
pub trait FishCoefficients<T>: Sync {
    fn at(&self, s: T, x: T, v: T, u: T) -> Coefficients<T>;
}

impl<T: Real> FishCoefficients<T> for GenericDynamics<T> {
    fn at(&self, s: T, x: T, v: T, u: T) -> Coefficients<T> {
        Coefficients {
            mu1: (self.mu1)(s, x, v, u),
            mu2: (self.mu2)(s, x, v, u),
            sigma1: (self.sigma1)(s, x, v, u),
            sigma2: (self.sigma2)(s, x, v, u),
        }
    }
}

/// One fish of a Cucker–Smale school with its neighbours held fixed.
#[derive(Debug, Clone)]
pub struct FrozenSchool<T> {
    pub params: ModelParams<T>,
    pub school: SchoolState<T>,
    pub fish: usize,
    pub convention: VelocityConvention,
}

impl<T: Real> FishCoefficients<T> for FrozenSchool<T> {
    fn at(&self, _s: T, _x: T, v: T, u: T) -> Coefficients<T> {
        let p = &self.params;
        let n = T::count(p.n_fish);
        let mut sum = T::zero();
        for (j, &vj) in self.school.velocities.iter().enumerate() {
            if j != self.fish {
                sum = sum + diff(self.convention, v, vj);
            }
        }
        Coefficients {
            mu1: u * v,
            mu2: p.coupling / n * u * p.comm_rate * sum,
            sigma1: p.sigma1,
            sigma2: p.sigma2.sqrt(),
        }
    }
}

#[inline]
fn diff<T: Real>(convention: VelocityConvention, vi: T, vj: T) -> T {
    match convention {
        VelocityConvention::Paper => vi - vj,
        VelocityConvention::Alignment => vj - vi,
    }
}

fn check_fish<T: Real>(state: &SchoolState<T>, controls: &[T], i: usize) -> Result<()> {
    ensure(i < state.n_fish(), || format!("fish index {i} out of range"))?;
    ensure(controls.len() == state.n_fish(), || "one control per fish required".into())
}

/// Position drift `μ₁` of fish `i`.
pub fn drift_position<T: Real>(
    spec: &DynamicsSpec<T>,
    state: &SchoolState<T>,
    controls: &[T],
    i: usize,
) -> Result<T> {
    check_fish(state, controls, i)?;
    let (x, v, u) = (state.positions[i], state.velocities[i], controls[i]);
    Ok(match spec {
        DynamicsSpec::CuckerSmale { .. } => u * v,
        DynamicsSpec::Generic(g) => (g.mu1)(state.time, x, v, u),
    })
}

/// Velocity drift `μ₂` of fish `i`.
pub fn drift_velocity<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    state: &SchoolState<T>,
    controls: &[T],
    i: usize,
) -> Result<T> {
    check_fish(state, controls, i)?;
    Ok(velocity_drift_unchecked(spec, params, state, controls, i))
}

#[inline]
fn velocity_drift_unchecked<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    state: &SchoolState<T>,
    controls: &[T],
    i: usize,
) -> T {
    let (x, v, u) = (state.positions[i], state.velocities[i], controls[i]);
    match spec {
        DynamicsSpec::CuckerSmale { convention } => {
            let n = T::count(state.n_fish());
            let sum: T = state.velocities.iter().map(|&vj| diff(*convention, v, vj)).sum();
            params.coupling / n * u * params.comm_rate * sum
        }
        DynamicsSpec::Generic(g) => (g.mu2)(state.time, x, v, u),
    }
}

/// Diffusion loadings `(l11, l21, l22)` of fish `i`.
fn loading<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    state: &SchoolState<T>,
    controls: &[T],
    i: usize,
) -> Result<(T, T, T)> {
    let block = match spec {
        DynamicsSpec::CuckerSmale { .. } => cucker_smale_diffusion(params),
        DynamicsSpec::Generic(g) => {
            let (s, x, v, u) = (state.time, state.positions[i], state.velocities[i], controls[i]);
            DiffusionBlock::new((g.sigma1)(s, x, v, u), (g.sigma2)(s, x, v, u), params.corr, params.cross_term)
        }
    };
    block.loading()
}

/// Diffusion block of the Cucker–Smale system: velocity noise `√σ₂ dB₂`.
pub fn cucker_smale_diffusion<T: Real>(params: &ModelParams<T>) -> DiffusionBlock<T> {
    DiffusionBlock::new(params.sigma1, params.sigma2.sqrt(), params.corr, params.cross_term)
}

/// Reusable buffers for [`advance`].
#[derive(Debug, Default, Clone)]
pub(crate) struct StepScratch<T> {
    mu1: Vec<T>,
    mu2: Vec<T>,
}

/// In-place Euler–Maruyama step. `noise` holds `I` position draws followed by
/// `I` velocity draws. With a nonzero correlation the velocity noise is
/// `l21 Z₁ + l22 Z₂` so the increment covariance matches the diffusion block;
/// with `corr = 0` this reduces to independent draws.
pub(crate) fn advance<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    state: &mut SchoolState<T>,
    controls: &[T],
    dt: T,
    noise: &[T],
    scratch: &mut StepScratch<T>,
) -> Result<()> {
    let n = state.n_fish();
    scratch.mu1.clear();
    scratch.mu2.clear();
    for i in 0..n {
        let mu1 = match spec {
            DynamicsSpec::CuckerSmale { .. } => controls[i] * state.velocities[i],
            DynamicsSpec::Generic(g) => (g.mu1)(state.time, state.positions[i], state.velocities[i], controls[i]),
        };
        scratch.mu1.push(mu1);
        scratch.mu2.push(velocity_drift_unchecked(spec, params, state, controls, i));
    }
    let sq = dt.sqrt();
    let shared = match spec {
        DynamicsSpec::CuckerSmale { .. } => Some(cucker_smale_diffusion(params).loading()?),
        DynamicsSpec::Generic(_) => None,
    };
    for i in 0..n {
        let (l11, l21, l22) = match shared {
            Some(l) => l,
            None => loading(spec, params, state, controls, i)?,
        };
        let (z1, z2) = (noise[i], noise[n + i]);
        let mut x = state.positions[i] + scratch.mu1[i] * dt + l11 * sq * z1;
        let v = state.velocities[i] + scratch.mu2[i] * dt + sq * (l21 * z1 + l22 * z2);
        if let Some(bounds) = &params.reachable {
            x = bounds.get(i).reflect(x);
        }
        state.positions[i] = x;
        state.velocities[i] = v;
    }
    state.time = state.time + dt;
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite state after step to s = {}", state.time)))
    }
}

/// One Euler–Maruyama step of the whole school.
///
/// `noise` must hold `2·I` standard normal draws: all position draws, then
/// all velocity draws.
pub fn step_euler_maruyama<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    state: &SchoolState<T>,
    controls: &[T],
    dt: T,
    noise: &[T],
) -> Result<SchoolState<T>> {
    ensure(dt > T::zero() && dt.is_finite(), || "dt must be positive".into())?;
    ensure(controls.len() == state.n_fish(), || "one control per fish required".into())?;
    ensure(noise.len() == 2 * state.n_fish(), || "noise must hold two draws per fish".into())?;
    let mut next = state.clone();
    advance(spec, params, &mut next, controls, dt, noise, &mut StepScratch::default())?;
    Ok(next)
}

/// `max − min` of the velocities, reported for the flocking checks.
pub fn velocity_spread<T: Real>(state: &SchoolState<T>) -> T {
    state.velocity_spread()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CrossTerm, Interval, PerFish};

    fn two_fish() -> (ModelParams<f64>, SchoolState<f64>) {
        let mut p = ModelParams::<f64>::new(2);
        p.comm_rate = 1.0;
        p.coupling = 1.0;
        (p, SchoolState::new(0.0, vec![0.0, 1.0], vec![1.0, 0.0]))
    }

    #[test]
    fn position_drift() {
        let (_, mut st) = two_fish();
        let cs = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        assert_eq!(drift_position(&cs, &st, &[0.0, 0.0], 0).unwrap(), 0.0);
        st.velocities[0] = 3.0;
        assert_eq!(drift_position(&cs, &st, &[2.0, 0.0], 0).unwrap(), 6.0);
        let g = DynamicsSpec::Generic(GenericDynamics::new(|_, _, v, _| v, |_, _, _, _| 0.0, |_, _, _, _| 0.0, |_, _, _, _| 0.0));
        st.velocities[0] = 1.5;
        assert_eq!(drift_position(&g, &st, &[0.0, 0.0], 0).unwrap(), 1.5);
        assert!(drift_position(&cs, &st, &[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn velocity_drift_conventions() {
        let (p, st) = two_fish();
        let paper = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        let align = DynamicsSpec::cucker_smale(VelocityConvention::Alignment);
        assert_eq!(drift_velocity(&paper, &p, &st, &[1.0, 1.0], 0).unwrap(), 0.5);
        assert_eq!(drift_velocity(&align, &p, &st, &[1.0, 1.0], 0).unwrap(), -0.5);
        let flat = SchoolState::new(0.0, vec![0.0, 3.0, -1.0], vec![0.7; 3]);
        let mut p3 = p.clone();
        p3.n_fish = 3;
        for spec in [&paper, &align] {
            for i in 0..3 {
                assert_eq!(drift_velocity(spec, &p3, &flat, &[1.3, 0.2, 4.0], i).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn deterministic_steps() {
        let (p, _) = two_fish();
        let cs = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        let st = SchoolState::new(0.0, vec![0.5, -1.0], vec![2.0, 2.0]);
        let next = step_euler_maruyama(&cs, &p, &st, &[0.0, 0.0], 0.1, &[0.3, -1.0, 2.0, 0.1]).unwrap();
        assert_eq!(next.positions, st.positions);
        assert_eq!(next.velocities, st.velocities);
        assert!((next.time - 0.1).abs() < 1e-15);

        let p1 = ModelParams::<f64>::new(1);
        let one = SchoolState::new(0.0, vec![0.0], vec![2.0]);
        let next = step_euler_maruyama(&cs, &p1, &one, &[1.0], 0.1, &[0.5, 0.5]).unwrap();
        assert!((next.positions[0] - 0.2).abs() < 1e-15);
        assert_eq!(next.velocities[0], 2.0);
    }

    #[test]
    fn reflecting_clamp() {
        let mut p = ModelParams::<f64>::new(1);
        p.sigma1 = 1.0;
        p.reachable = Some(PerFish::Shared(Interval::new(-0.1, 0.1)));
        let cs = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        let st = SchoolState::new(0.0, vec![0.05], vec![0.0]);
        let next = step_euler_maruyama(&cs, &p, &st, &[0.0], 0.01, &[3.0, 0.0]).unwrap();
        assert!((next.positions[0] + 0.05).abs() < 1e-12);
    }

    #[test]
    fn non_finite_step_fails() {
        let p = ModelParams::<f64>::new(1);
        let g = DynamicsSpec::Generic(GenericDynamics::constant(f64::INFINITY, 0.0, 0.0, 0.0));
        let st = SchoolState::new(0.0, vec![0.0], vec![0.0]);
        let err = step_euler_maruyama(&g, &p, &st, &[0.0], 0.1, &[0.0, 0.0]).unwrap_err();
        assert!(!err.is_validation());
    }

    #[test]
    fn cross_term_flag_changes_loading() {
        let mut p = ModelParams::<f64>::new(1);
        p.sigma1 = 0.5;
        p.sigma2 = 0.81;
        p.corr = 0.5;
        let a = cucker_smale_diffusion(&p).xv();
        p.cross_term = CrossTerm::Conventional;
        let b = cucker_smale_diffusion(&p).xv();
        assert!((a - 0.5 * 0.125).abs() < 1e-15);
        assert!((b - 0.5 * 0.5 * 0.9).abs() < 1e-15);
    }
}
