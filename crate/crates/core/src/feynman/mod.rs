//! Path-integral side of the game: the action, the `f` function of the
//! localized kernel, the shifted Gaussian integral, the Feynman–Kac
//! estimator of the desirability and the wave evolution.

mod fk;
mod kernel;
mod wave;

pub use fk::{feynman_kac_estimate, FkEstimate, FkOptions, FkScheme};
pub use kernel::{gaussian_mass, shifted_gaussian_integral, transition_step, GaussianMode, KernelBlock, Localization};
pub use wave::{wave_evolution, wave_pde_residual, WaveControl, WaveF};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lqg::LqgField;
use crate::model::{discounted_running_weight, DiffusionBlock, ModelParams, RewardSpec};
use crate::scalar::Real;
use crate::sde::FishCoefficients;

/// Value and partial derivatives of `g(s, x, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GJet<T> {
    pub value: T,
    pub ds: T,
    pub dx: T,
    pub dv: T,
    pub dxx: T,
    pub dxv: T,
    pub dvv: T,
}

impl<T: Real> GJet<T> {
    pub fn is_finite(&self) -> bool {
        [self.value, self.ds, self.dx, self.dv, self.dxx, self.dxv, self.dvv].iter().all(|c| c.is_finite())
    }
}

/// The `C²` function `g(s, x, v)` of the action expansion.
pub trait GAnsatz<T: Real>: Sync {
    fn value(&self, s: T, x: T, v: T) -> T;

    /// Value and partials; the default uses central differences.
    fn jet(&self, s: T, x: T, v: T) -> GJet<T> {
        fd_jet(&|s, x, v| self.value(s, x, v), s, x, v)
    }
}

/// `g ≡ c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAnsatz<T>(pub T);

impl<T: Real> GAnsatz<T> for ConstantAnsatz<T> {
    fn value(&self, _s: T, _x: T, _v: T) -> T {
        self.0
    }
    fn jet(&self, _s: T, _x: T, _v: T) -> GJet<T> {
        GJet { value: self.0, ..GJet::default() }
    }
}

/// Any closure, differentiated numerically.
#[derive(Clone)]
pub struct FdAnsatz<T>(pub Arc<dyn Fn(T, T, T) -> T + Send + Sync>);

impl<T: Real> FdAnsatz<T> {
    pub fn new(g: impl Fn(T, T, T) -> T + Send + Sync + 'static) -> Self {
        FdAnsatz(Arc::new(g))
    }
}

impl<T: Real> GAnsatz<T> for FdAnsatz<T> {
    fn value(&self, s: T, x: T, v: T) -> T {
        (self.0)(s, x, v)
    }
}

/// Central-difference jet: step `1e−5·scale` for first and `1e−4·scale` for
/// second derivatives (the wider step keeps round-off in check).
pub fn fd_jet<T: Real>(g: &dyn Fn(T, T, T) -> T, s: T, x: T, v: T) -> GJet<T> {
    let scale = |c: T| c.abs().max(T::one());
    let (h1, h2) = (T::lit(1e-5), T::lit(1e-4));
    let (es, ex, ev) = (h1 * scale(s), h1 * scale(x), h1 * scale(v));
    let (fx, fv) = (h2 * scale(x), h2 * scale(v));
    let two = T::two();
    let g0 = g(s, x, v);
    GJet {
        value: g0,
        ds: (g(s + es, x, v) - g(s - es, x, v)) / (two * es),
        dx: (g(s, x + ex, v) - g(s, x - ex, v)) / (two * ex),
        dv: (g(s, x, v + ev) - g(s, x, v - ev)) / (two * ev),
        dxx: (g(s, x + fx, v) - two * g0 + g(s, x - fx, v)) / (fx * fx),
        dvv: (g(s, x, v + fv) - two * g0 + g(s, x, v - fv)) / (fv * fv),
        dxv: (g(s, x + fx, v + fv) - g(s, x + fx, v - fv) - g(s, x - fx, v + fv) + g(s, x - fx, v - fv))
            / (T::lit(4.0) * fx * fv),
    }
}

/// Checks that the mixed partial of `g` does not depend on the order of
/// differentiation at every point, using one-sided outer differences.
/// Returns the largest relative asymmetry.
pub fn hessian_asymmetry<T: Real>(ansatz: &dyn GAnsatz<T>, points: &[(T, T, T)]) -> T {
    let mut worst = T::zero();
    for &(s, x, v) in points {
        let h = T::lit(1e-4) * x.abs().max(v.abs()).max(T::one());
        let k = h / T::two();
        let gx = |x: T, v: T| (ansatz.value(s, x + k, v) - ansatz.value(s, x - k, v)) / (T::two() * k);
        let gv = |x: T, v: T| (ansatz.value(s, x, v + k) - ansatz.value(s, x, v - k)) / (T::two() * k);
        let a = (gv(x + h, v) - gv(x, v)) / h;
        let b = (gx(x, v + h) - gx(x, v)) / h;
        let scale = a.abs().max(b.abs()).max(ansatz.value(s, x, v).abs()).max(T::one());
        worst = worst.max((a - b).abs() / scale);
    }
    worst
}

/// Everything needed to evaluate the action and `f` for one fish.
#[derive(Clone, Copy)]
pub struct ActionSpec<'a, T> {
    pub params: &'a ModelParams<T>,
    pub fish: usize,
    pub reward: &'a RewardSpec<T>,
    pub coefficients: &'a dyn FishCoefficients<T>,
    pub field: &'a LqgField<T>,
    /// Circle parameter at which `k` is frozen for the run.
    pub l: T,
    pub ansatz: &'a dyn GAnsatz<T>,
}

/// Realized increments over one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increments<T> {
    pub dx: T,
    pub dv: T,
    pub db1: T,
    pub db2: T,
}

/// One slice of the action:
/// `e^{−ρs}αH·h·dt + λ₁(Δx − μ₁dt − σ₁ΔB₁) + λ₂(Δv − μ₂dt − σ₂ΔB₂) + λ₃ e^{γk(l)} dt`.
#[allow(clippy::too_many_arguments)]
pub fn action_increment<T: Real>(
    spec: &ActionSpec<'_, T>,
    s: T,
    x: T,
    v: T,
    u: T,
    inc: Increments<T>,
    dt: T,
) -> Result<T> {
    let p = spec.params;
    let c = spec.coefficients.at(s, x, v, u);
    let h = crate::model::evaluate_reward(spec.reward, s, x, v, u)?;
    let mut a = discounted_running_weight(p, spec.fish, s) * h * dt
        + p.mult1 * (inc.dx - c.mu1 * dt - c.sigma1 * inc.db1)
        + p.mult2 * (inc.dv - c.mu2 * dt - c.sigma2 * inc.db2);
    if p.mult3 != T::zero() {
        a = a + p.mult3 * spec.field.metric_weight(spec.l)? * dt;
    }
    if a.is_finite() {
        Ok(a)
    } else {
        Err(Error::numerical("action increment is not finite"))
    }
}

/// `f = e^{−ρs}αH·h + g + g_s + g_x μ₁ + g_v μ₂ + ½(σ₁² g_xx + 2·cov·g_xv + σ₂² g_vv)`.
pub fn f_function<T: Real>(spec: &ActionSpec<'_, T>, s: T, x: T, v: T, u: T) -> Result<T> {
    let g = spec.ansatz.jet(s, x, v);
    if !g.is_finite() {
        return Err(Error::numerical(format!("ansatz partials not finite at (s={s}, x={x}, v={v})")));
    }
    let c = spec.coefficients.at(s, x, v, u);
    let p = spec.params;
    let block = DiffusionBlock::new(c.sigma1, c.sigma2, p.corr, p.cross_term);
    let h = spec.reward.eval_unchecked(s, x, v, u);
    let f = discounted_running_weight(p, spec.fish, s) * h
        + g.value
        + g.ds
        + g.dx * c.mu1
        + g.dv * c.mu2
        + block.second_order(g.dxx, g.dxv, g.dvv);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::numerical(format!("f not finite at (s={s}, x={x}, v={v}, u={u})")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PerFish;
    use crate::scalar::sqrt_eight_thirds;
    use crate::sde::GenericDynamics;

    fn setup() -> (ModelParams<f64>, LqgField<f64>, GenericDynamics<f64>) {
        let mut p = ModelParams::new(1);
        p.discount = PerFish::Shared(0.2);
        p.weight = PerFish::Shared(1.5);
        p.survival = PerFish::Shared(0.8);
        p.sigma1 = 0.4;
        p.sigma2 = 0.3;
        p.corr = 0.25;
        let f = LqgField::zero(sqrt_eight_thirds(), 4).unwrap();
        let dyn_ = GenericDynamics::new(|_, _, v, u| u * v, |_, _, _, _| 0.4, |_, x, _, _| -x, |_, _, _, _| 0.3);
        (p, f, dyn_)
    }

    #[test]
    fn action_examples() {
        let (p, field, d) = setup();
        let r = RewardSpec::Example1;
        let g = ConstantAnsatz(0.0);
        let (s, x, v, u, dt) = (0.3, 1.2, -0.7, 0.9, 0.01);
        let w = discounted_running_weight(&p, 0, s) * x * v * u * u * dt;
        let off = Increments { dx: 0.5, dv: -0.2, db1: 0.1, db2: 0.3 };
        let spec = ActionSpec { params: &p, fish: 0, reward: &r, coefficients: &d, field: &field, l: 0.4, ansatz: &g };
        assert!((action_increment(&spec, s, x, v, u, off, dt).unwrap() - w).abs() < 1e-15);

        let mut p2 = p.clone();
        p2.mult1 = 2.0;
        p2.mult2 = 3.0;
        let c = d.at(s, x, v, u);
        let on = Increments { dx: c.mu1 * dt + c.sigma1 * 0.1, dv: c.mu2 * dt + c.sigma2 * 0.3, db1: 0.1, db2: 0.3 };
        let spec = ActionSpec { params: &p2, ..spec };
        assert!((action_increment(&spec, s, x, v, u, on, dt).unwrap() - w).abs() < 1e-15);

        let mut p3 = p.clone();
        p3.mult3 = 1.0;
        let zero = RewardSpec::constant(0.0);
        let spec = ActionSpec { params: &p3, reward: &zero, ..spec };
        assert!((action_increment(&spec, s, x, v, u, on, dt).unwrap() - dt).abs() < 1e-15);
    }

    #[test]
    fn f_examples() {
        let (p, field, d) = setup();
        let zero = RewardSpec::constant(0.0);
        let g = ConstantAnsatz(2.5);
        let spec = ActionSpec { params: &p, fish: 0, reward: &zero, coefficients: &d, field: &field, l: 0.0, ansatz: &g };
        assert_eq!(f_function(&spec, 0.4, 1.0, 2.0, 3.0).unwrap(), 2.5);
        let r = RewardSpec::Example1;
        let g0 = ConstantAnsatz(0.0);
        let spec = ActionSpec { reward: &r, ansatz: &g0, ..spec };
        let (s, x, v, u) = (0.4, 1.1, 2.0, 0.5);
        let want = discounted_running_weight(&p, 0, s) * x * v * u * u;
        assert!((f_function(&spec, s, x, v, u).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn fd_jet_matches_analytic() {
        let g = |s: f64, x: f64, v: f64| (0.3 * s + 0.5 * x * v - 0.2 * v * v).exp();
        let (s, x, v) = (0.7, 0.4, -1.1);
        let j = fd_jet(&g, s, x, v);
        let e = 0.3 * s + 0.5 * x * v - 0.2 * v * v;
        let gv = e.exp();
        let (ex, ev) = (0.5 * v, 0.5 * x - 0.4 * v);
        assert!((j.ds - 0.3 * gv).abs() < 1e-8);
        assert!((j.dx - ex * gv).abs() < 1e-8);
        assert!((j.dv - ev * gv).abs() < 1e-8);
        assert!((j.dxx - ex * ex * gv).abs() < 1e-6);
        assert!((j.dvv - (ev * ev - 0.4) * gv).abs() < 1e-6);
        assert!((j.dxv - (ex * ev + 0.5) * gv).abs() < 1e-6);
    }

    #[test]
    fn asymmetry_detects_kinks() {
        let smooth = FdAnsatz::new(|_, x: f64, v: f64| (x * v).sin());
        let kink = FdAnsatz::new(|_, x: f64, v: f64| (x - 2.0 * v).abs() * x);
        let pts = [(0.0, 0.3, 0.2), (0.0, -0.5, 1.0)];
        assert!(hessian_asymmetry(&smooth, &pts) < 1e-3);
        assert!(hessian_asymmetry(&kink, &[(0.0, 0.2, 0.1)]) > 0.1);
    }
}
