use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::model::{ModelParams, Policy, SchoolState};
use crate::rng::{normal, stream, stream_rng};
use crate::scalar::Real;
use crate::sde::{advance, DynamicsSpec, StepScratch};

/// A running potential `V(s, school)`; paths accumulate `−∫ V ds` as their
/// log-weight.
pub type Potential<T> = Arc<dyn Fn(T, &SchoolState<T>) -> T + Send + Sync>;

/// One simulated school trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<T> {
    /// `n_steps + 1` states, starting with the initial one.
    pub states: Vec<SchoolState<T>>,
    /// Controls applied at each recorded state (the last row is the policy
    /// evaluated at the terminal state).
    pub controls: Vec<Vec<T>>,
    pub log_weight: T,
}

/// Seeded Monte Carlo trajectories of the whole school.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble<T> {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: T,
    pub seed: u64,
    pub paths: Vec<Trajectory<T>>,
}

/// Number of steps in `horizon / dt`; the ratio must be a whole number to
/// within `1e-6`.
pub fn steps_for<T: Real>(horizon: T, dt: T) -> Result<usize> {
    ensure(dt > T::zero() && dt.is_finite(), || "dt must be positive".into())?;
    ensure(horizon > T::zero() && horizon.is_finite(), || "horizon must be positive".into())?;
    let ratio = (horizon / dt).as_f64();
    let n = ratio.round();
    ensure((ratio - n).abs() <= 1e-6 * n.max(1.0) && n >= 1.0, || {
        format!("horizon / dt = {ratio} is not a whole number of steps")
    })?;
    Ok(n as usize)
}

/// Integrates path `index` and calls `visit(step, state, controls)` at every
/// grid time including the initial one. Returns the accumulated log-weight.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_path<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    policy: &dyn Policy<T>,
    initial: &SchoolState<T>,
    horizon: T,
    dt: T,
    seed: u64,
    index: usize,
    potential: Option<&Potential<T>>,
    mut visit: impl FnMut(usize, &SchoolState<T>, &[T]) -> Result<()>,
) -> Result<T> {
    let n_steps = steps_for(horizon, dt)?;
    let n = initial.n_fish();
    let mut rng = stream_rng(seed, stream::SIMULATE, index as u64);
    let mut state = initial.clone();
    let mut controls = vec![T::zero(); n];
    let mut noise = vec![T::zero(); 2 * n];
    let mut scratch = StepScratch::default();
    let mut log_weight = T::zero();
    let mut v_prev = T::zero();
    let diverged = |step| Error::Diverged { path: index, step };
    for step in 0..=n_steps {
        policy.controls(state.time, &state, &mut controls)?;
        if controls.iter().any(|u| !u.is_finite()) {
            return Err(diverged(step));
        }
        if let Some(pot) = potential {
            let v = pot(state.time, &state);
            if step > 0 {
                log_weight = log_weight - T::half() * dt * (v_prev + v);
            }
            v_prev = v;
            if !log_weight.is_finite() {
                return Err(diverged(step));
            }
        }
        visit(step, &state, &controls)?;
        if step == n_steps {
            break;
        }
        for z in noise.iter_mut() {
            *z = normal(&mut rng);
        }
        match advance(spec, params, &mut state, &controls, dt, &noise, &mut scratch) {
            Ok(()) => {}
            Err(Error::Numerical(_)) => return Err(diverged(step + 1)),
            Err(e) => return Err(e),
        }
        // Keep grid times exact rather than accumulated.
        state.time = initial.time + T::count(step + 1) * dt;
    }
    Ok(log_weight)
}

/// Simulates `n_paths` school trajectories under `policy`.
///
/// Path `p` draws from the stream keyed by `(seed, p)`, so the ensemble is
/// identical however the paths are scheduled.
#[allow(clippy::too_many_arguments)]
pub fn simulate<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    policy: &dyn Policy<T>,
    initial: &SchoolState<T>,
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    simulate_weighted(spec, params, policy, initial, horizon, dt, n_paths, seed, None)
}

/// [`simulate`] with per-path log-weights `−∫ V ds` (trapezoid rule).
#[allow(clippy::too_many_arguments)]
pub fn simulate_weighted<T: Real>(
    spec: &DynamicsSpec<T>,
    params: &ModelParams<T>,
    policy: &dyn Policy<T>,
    initial: &SchoolState<T>,
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
    potential: Option<Potential<T>>,
) -> Result<PathEnsemble<T>> {
    params.validate_basic()?;
    initial.validate(params)?;
    ensure(n_paths >= 1, || "n_paths must be at least 1".into())?;
    let n_steps = steps_for(horizon, dt)?;
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut states = Vec::with_capacity(n_steps + 1);
            let mut controls = Vec::with_capacity(n_steps + 1);
            let log_weight =
                integrate_path(spec, params, policy, initial, horizon, dt, seed, p, potential.as_ref(), |_, s, u| {
                    states.push(s.clone());
                    controls.push(u.to_vec());
                    Ok(())
                })?;
            Ok(Trajectory { states, controls, log_weight })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { n_paths, n_steps, dt, seed, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstantPolicy, FnPolicy};
    use crate::sde::{GenericDynamics, VelocityConvention};

    #[test]
    fn step_count_checks() {
        assert_eq!(steps_for(1.0, 0.01).unwrap(), 100);
        assert_eq!(steps_for(0.3, 0.1).unwrap(), 3);
        assert!(steps_for(1.0, 0.3).is_err());
        assert!(steps_for(1.0, 0.0).is_err());
    }

    #[test]
    fn identical_seeds_identical_ensembles() {
        let mut p = ModelParams::<f64>::new(3);
        p.sigma1 = 0.4;
        p.sigma2 = 0.3;
        let cs = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        let init = SchoolState::new(0.0, vec![0.0, 1.0, 2.0], vec![0.5, -0.5, 0.1]);
        let a = simulate(&cs, &p, &ConstantPolicy(0.3), &init, 0.5, 0.01, 8, 11).unwrap();
        let b = simulate(&cs, &p, &ConstantPolicy(0.3), &init, 0.5, 0.01, 8, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&cs, &p, &ConstantPolicy(0.3), &init, 0.5, 0.01, 8, 12).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.paths[3].states.len(), 51);
        assert_eq!(a.paths[3].states[50].time, 0.5);
    }

    #[test]
    fn divergence_reports_path_and_step() {
        let p = ModelParams::<f64>::new(1);
        let g = DynamicsSpec::Generic(GenericDynamics::new(
            |_, x: f64, _, _| x * x * 1e3,
            |_, _, _, _| 0.0,
            |_, _, _, _| 0.0,
            |_, _, _, _| 0.0,
        ));
        let init = SchoolState::new(0.0, vec![10.0], vec![0.0]);
        let err = simulate(&g, &p, &ConstantPolicy(0.0), &init, 1.0, 0.1, 2, 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { path: 0, step } if step > 0));
    }

    #[test]
    fn potential_weights() {
        let p = ModelParams::<f64>::new(1);
        let g = DynamicsSpec::Generic(GenericDynamics::constant(0.0, 0.0, 0.0, 0.0));
        let init = SchoolState::new(0.0, vec![0.0], vec![0.0]);
        let pot: Potential<f64> = Arc::new(|_, _| 2.0);
        let e = simulate_weighted(&g, &p, &FnPolicy::new(|_, _, _| 0.0), &init, 1.0, 0.1, 1, 0, Some(pot)).unwrap();
        assert!((e.paths[0].log_weight + 2.0).abs() < 1e-12);
    }
}
