//! Quadratic-control HJB equation, its Cole–Hopf linearization, and an
//! explicit finite-difference solver for the desirability `Θ`.

mod grid;
mod solver;

pub use grid::{derivatives, Axis, Derivatives, GridTag, ValueGrid};
pub use solver::{solve_theta_backward, SolverOptions};

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Zip};

use crate::error::{ensure, Error, Result};
use crate::model::{CrossTerm, DiffusionBlock, ModelParams, OMEGA_EPSILON};
use crate::scalar::Real;

/// `f(s, x, v)`.
pub type FieldFn<T> = Arc<dyn Fn(T, T, T) -> T + Send + Sync>;

/// Reward, control-free drifts and constant diffusion of the HJB problem.
#[derive(Clone)]
pub struct HjbProblem<T> {
    /// Running reward `W(s, x, v)`.
    pub reward: FieldFn<T>,
    pub drift_x: FieldFn<T>,
    pub drift_v: FieldFn<T>,
    pub diffusion: DiffusionBlock<T>,
    pub quad_cost: T,
    /// Scale linking `Φ̄` and `Θ`; defaults to `R [σ₁² + 2·cov + σ₂²]`.
    pub omega: T,
    pub omega_epsilon: T,
}

impl<T> fmt::Debug for HjbProblem<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HjbProblem")
            .field("diffusion", &self.diffusion)
            .field("quad_cost", &self.quad_cost)
            .field("omega", &self.omega)
            .finish_non_exhaustive()
    }
}

impl<T: Real> HjbProblem<T> {
    pub fn new(
        reward: impl Fn(T, T, T) -> T + Send + Sync + 'static,
        drift_x: impl Fn(T, T, T) -> T + Send + Sync + 'static,
        drift_v: impl Fn(T, T, T) -> T + Send + Sync + 'static,
        diffusion: DiffusionBlock<T>,
        quad_cost: T,
    ) -> Result<Self> {
        ensure(quad_cost > T::zero() && quad_cost.is_finite(), || "quad_cost must be positive".into())?;
        ensure(
            diffusion.sigma1.is_finite() && diffusion.sigma2.is_finite() && diffusion.corr.abs() < T::one(),
            || "diffusion constants must be finite with |corr| < 1".into(),
        )?;
        Ok(HjbProblem {
            reward: Arc::new(reward),
            drift_x: Arc::new(drift_x),
            drift_v: Arc::new(drift_v),
            diffusion,
            quad_cost,
            omega: diffusion.omega(quad_cost),
            omega_epsilon: T::lit(OMEGA_EPSILON),
        })
    }

    /// Diffusion, cost and `ω` threshold taken from `params`.
    pub fn from_params(
        params: &ModelParams<T>,
        reward: impl Fn(T, T, T) -> T + Send + Sync + 'static,
        drift_x: impl Fn(T, T, T) -> T + Send + Sync + 'static,
        drift_v: impl Fn(T, T, T) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        let mut p = Self::new(reward, drift_x, drift_v, params.diffusion(), params.quad_cost)?;
        p.omega_epsilon = params.omega_epsilon;
        Ok(p)
    }

    /// Overrides `ω`, e.g. with `−Rσ²` for a maximization whose quadratic
    /// terms cancel only under the opposite sign.
    pub fn with_omega(mut self, omega: T) -> Self {
        self.omega = omega;
        self
    }

    /// `ω`, or a numerical failure when it is degenerate.
    pub fn checked_omega(&self) -> Result<T> {
        check_omega(self.omega, self.omega_epsilon)
    }

    pub fn cross_term(&self) -> CrossTerm {
        self.diffusion.cross_term
    }
}

fn check_omega<T: Real>(omega: T, eps: T) -> Result<T> {
    if !omega.is_finite() || omega.abs() <= eps {
        return Err(Error::numerical(format!("ω degenerate: |ω| = {} ≤ {}", omega.abs(), eps)));
    }
    Ok(omega)
}

/// `u* = (φ_x + φ_v) / R`.
pub fn optimal_control_quadratic<T: Real>(phi_x: T, phi_v: T, quad_cost: T) -> Result<T> {
    ensure(quad_cost > T::zero(), || "quad_cost must be positive".into())?;
    Ok((phi_x + phi_v) / quad_cost)
}

fn rhs<T: Real>(phi: &ValueGrid<T>, problem: &HjbProblem<T>, nonlinear: bool) -> Result<ValueGrid<T>> {
    phi.validate()?;
    let d = derivatives(phi);
    let r = problem.quad_cost;
    let s = phi.time;
    let xs = phi.x.coords();
    let vs = phi.v.coords();
    let two = T::two();
    let mut out = Array2::zeros(phi.values.dim());
    for ((i, j), o) in out.indexed_iter_mut() {
        let (x, v) = (xs[i], vs[j]);
        let (px, pv) = (d.dx[[i, j]], d.dv[[i, j]]);
        let w = (problem.reward)(s, x, v);
        let mu1 = (problem.drift_x)(s, x, v);
        let mu2 = (problem.drift_v)(s, x, v);
        let second = problem.diffusion.second_order(d.dxx[[i, j]], d.dxv[[i, j]], d.dvv[[i, j]]);
        let mut val = w + mu1 * px + (two / r) * px * pv + mu2 * pv + second;
        if nonlinear {
            let sum = px + pv;
            val = val - sum * sum / (two * r) + px * px / r + pv * pv / r;
        }
        *o = val;
    }
    if out.iter().any(|v: &T| !v.is_finite()) {
        return Err(Error::numerical("HJB right-hand side is not finite"));
    }
    Ok(phi.with_values(out, phi.tag))
}

/// `−∂Φ̄/∂s` from the full quadratic-control HJB equation:
/// `W − (φ_x+φ_v)²/2R + μ₁φ_x + φ_x²/R + 2φ_xφ_v/R + μ₂φ_v + φ_v²/R` plus the
/// second-order diffusion block.
pub fn hjb_rhs_nonlinear<T: Real>(phi: &ValueGrid<T>, problem: &HjbProblem<T>) -> Result<ValueGrid<T>> {
    rhs(phi, problem, true)
}

/// `−∂Φ̄/∂s` with the pure squares removed; the `2φ_xφ_v/R` cross term stays.
pub fn hjb_rhs_linearized<T: Real>(phi: &ValueGrid<T>, problem: &HjbProblem<T>) -> Result<ValueGrid<T>> {
    rhs(phi, problem, false)
}

/// `Φ̄ = −ω log Θ`.
pub fn cole_hopf_forward<T: Real>(theta: &ValueGrid<T>, omega: T, omega_epsilon: T) -> Result<ValueGrid<T>> {
    let omega = check_omega(omega, omega_epsilon)?;
    ensure(theta.values.iter().all(|&t| t > T::zero() && t.is_finite()), || {
        "Θ must be strictly positive for the log transform".into()
    })?;
    Ok(theta.with_values(theta.values.mapv(|t| -omega * t.ln()), GridTag::PhiBar))
}

/// `Θ = exp(−Φ̄/ω)`.
pub fn cole_hopf_inverse<T: Real>(phi: &ValueGrid<T>, omega: T, omega_epsilon: T) -> Result<ValueGrid<T>> {
    let omega = check_omega(omega, omega_epsilon)?;
    let values = phi.values.mapv(|p| (-p / omega).exp());
    if values.iter().any(|&t| !(t > T::zero() && t.is_finite())) {
        return Err(Error::numerical("exp(−Φ̄/ω) left the representable range"));
    }
    Ok(phi.with_values(values, GridTag::Theta))
}

/// Feedback `u* = (Φ̄_x + Φ̄_v) / R` with `Φ̄ = −ω log Θ`.
pub fn control_field_from_theta<T: Real>(
    theta: &ValueGrid<T>,
    omega: T,
    quad_cost: T,
    omega_epsilon: T,
) -> Result<ValueGrid<T>> {
    ensure(quad_cost > T::zero(), || "quad_cost must be positive".into())?;
    let phi = cole_hopf_forward(theta, omega, omega_epsilon)?;
    let d = derivatives(&phi);
    let mut u = Array2::zeros(phi.values.dim());
    Zip::from(&mut u).and(&d.dx).and(&d.dv).for_each(|u, &px, &pv| *u = (px + pv) / quad_cost);
    Ok(phi.with_values(u, GridTag::Control))
}
