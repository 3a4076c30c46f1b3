use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Real;

/// `h(s, x, v, u)`.
pub type RewardFn<T> = Arc<dyn Fn(T, T, T, T) -> T + Send + Sync>;

/// The running reward `h₀₁`.
#[derive(Clone)]
pub enum RewardSpec<T> {
    /// Any callable `h(s, x, v, u)`.
    Generic(RewardFn<T>),
    /// `h = x·v·u²`.
    Example1,
}

impl<T: Real> RewardSpec<T> {
    pub fn generic(f: impl Fn(T, T, T, T) -> T + Send + Sync + 'static) -> Self {
        RewardSpec::Generic(Arc::new(f))
    }

    /// `h ≡ c`.
    pub fn constant(c: T) -> Self {
        Self::generic(move |_, _, _, _| c)
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, s: T, x: T, v: T, u: T) -> T {
        match self {
            RewardSpec::Generic(f) => f(s, x, v, u),
            RewardSpec::Example1 => x * v * u * u,
        }
    }
}

impl<T> fmt::Debug for RewardSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardSpec::Generic(_) => f.write_str("RewardSpec::Generic(..)"),
            RewardSpec::Example1 => f.write_str("RewardSpec::Example1"),
        }
    }
}

/// `h₀₁(s, x, v, u)`; rejects non-finite arguments.
pub fn evaluate_reward<T: Real>(spec: &RewardSpec<T>, s: T, x: T, v: T, u: T) -> Result<T> {
    if !(s.is_finite() && x.is_finite() && v.is_finite() && u.is_finite()) {
        return Err(Error::validation("reward arguments must be finite"));
    }
    let h = spec.eval_unchecked(s, x, v, u);
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::numerical(format!("reward not finite at (s={s}, x={x}, v={v}, u={u})")))
    }
}

/// `exp(−ρ^i s)·α^i·H₀₁^i`.
pub fn discounted_running_weight<T: Real>(params: &ModelParams<T>, fish: usize, s: T) -> T {
    (-params.discount(fish) * s).exp() * params.weight(fish) * params.survival(fish)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PerFish;

    #[test]
    fn example1_reward() {
        let r = RewardSpec::<f64>::Example1;
        assert_eq!(evaluate_reward(&r, 0.0, 2.0, 3.0, 0.5).unwrap(), 1.5);
        assert_eq!(evaluate_reward(&r, 4.0, -7.0, 3.3, 0.0).unwrap(), 0.0);
        assert_eq!(evaluate_reward(&r, 0.0, 1.0, -1.0, 1.0).unwrap(), -1.0);
        assert!(evaluate_reward(&r, f64::NAN, 1.0, 1.0, 1.0).unwrap_err().is_validation());
        assert!(evaluate_reward(&r, 0.0, 1.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn running_weight_values() {
        let mut p = ModelParams::<f64>::new(1);
        p.discount = PerFish::Shared(0.1);
        assert_eq!(discounted_running_weight(&p, 0, 0.0), 1.0);

        p.discount = PerFish::Shared(0.5);
        p.weight = PerFish::Shared(2.0);
        p.survival = PerFish::Shared(0.5);
        assert_eq!(discounted_running_weight(&p, 0, 0.0), 1.0);

        p.discount = PerFish::Shared(0.999_999_999);
        p.weight = PerFish::Shared(1.0);
        p.survival = PerFish::Shared(1.0);
        let w = discounted_running_weight(&p, 0, std::f64::consts::LN_2 / 0.999_999_999);
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn running_weight_decreasing() {
        let p = ModelParams::<f64>::new(1);
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let w = discounted_running_weight(&p, 0, k as f64 * 0.37);
            assert!(w < prev);
            prev = w;
        }
    }
}
