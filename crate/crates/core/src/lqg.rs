//! Truncated log-correlated field `k(l)` on a circle parameter, the surface
//! weight `e^{γ k(l)}` and the conformal coordinate shift
//! `k̃ = k∘ζ + Q log|ζ′|`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{normal, stream, stream_rng};
use crate::scalar::{sqrt_eight_thirds, Real};

/// A realization `k(l) = Σₙ (aₙ cos nl + bₙ sin nl) / √n`, `n = 1..L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct LqgField<T> {
    pub gamma: T,
    #[serde(rename = "L")]
    pub truncation: usize,
    pub seed: u64,
    /// Unscaled `(aₙ, bₙ)` pairs.
    pub coefficients: Vec<[T; 2]>,
}

fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    ensure(gamma > T::zero() && gamma < T::two(), || format!("gamma must lie in (0, 2), got {gamma}"))
}

impl<T: Real> LqgField<T> {
    /// A field with prescribed coefficients.
    pub fn from_coefficients(gamma: T, coefficients: Vec<[T; 2]>) -> Result<Self> {
        check_gamma(gamma)?;
        ensure(!coefficients.is_empty(), || "at least one mode required".into())?;
        ensure(coefficients.iter().flatten().all(|c| c.is_finite()), || "coefficients must be finite".into())?;
        Ok(LqgField { gamma, truncation: coefficients.len(), seed: 0, coefficients })
    }

    /// `k ≡ 0` with `L` modes.
    pub fn zero(gamma: T, truncation: usize) -> Result<Self> {
        Self::from_coefficients(gamma, vec![[T::zero(); 2]; truncation.max(1)])
    }

    /// The field with every coefficient negated.
    pub fn mirrored(&self) -> Self {
        let mut f = self.clone();
        for c in f.coefficients.iter_mut() {
            *c = [-c[0], -c[1]];
        }
        f
    }

    /// Checks invariants of a deserialized field.
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        ensure(self.coefficients.len() == self.truncation && self.truncation >= 1, || {
            "field must hold L coefficient pairs".into()
        })?;
        ensure(self.coefficients.iter().flatten().all(|c| c.is_finite()), || "coefficients must be finite".into())
    }

    /// `k(l)`.
    pub fn eval(&self, l: T) -> T {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let n = T::count(i + 1);
                let (s, co) = (n * l).sin_cos();
                (c[0] * co + c[1] * s) / n.sqrt()
            })
            .sum()
    }

    /// `e^{γ k(l)}`; fails when the exponent leaves the representable range.
    pub fn metric_weight(&self, l: T) -> Result<T> {
        ensure(l.is_finite(), || "l must be finite".into())?;
        exp_checked(self.gamma * self.eval(l))
    }
}

/// `e^{a}`, failing instead of returning `0` or `∞`.
pub(crate) fn exp_checked<T: Real>(a: T) -> Result<T> {
    let max = T::max_value().ln();
    let min = T::min_positive_value().ln();
    if !a.is_finite() || a > max || a < min {
        return Err(Error::numerical(format!("exponent {a} outside the representable range")));
    }
    Ok(a.exp())
}

/// Samples `L` modes with i.i.d. standard normal coefficients.
pub fn sample_field<T: Real>(gamma: T, truncation: usize, seed: u64) -> Result<LqgField<T>> {
    check_gamma(gamma)?;
    ensure(truncation >= 1, || "L must be at least 1".into())?;
    let mut rng = stream_rng(seed, stream::FIELD, 0);
    let coefficients = (0..truncation).map(|_| [normal(&mut rng), normal(&mut rng)]).collect();
    Ok(LqgField { gamma, truncation, seed, coefficients })
}

/// [`sample_field`] at `γ = √(8/3)`.
pub fn sample_default_field<T: Real>(truncation: usize, seed: u64) -> Result<LqgField<T>> {
    sample_field(sqrt_eight_thirds(), truncation, seed)
}

/// `Q = 2/γ + γ/2`.
pub fn q_constant<T: Real>(gamma: T) -> Result<T> {
    ensure(gamma > T::zero() && gamma.is_finite(), || format!("gamma must be positive, got {gamma}"))?;
    Ok(T::two() / gamma + gamma / T::two())
}

/// A real function of the circle parameter.
pub trait ScalarField<T> {
    fn value(&self, l: T) -> Result<T>;
}

impl<T: Real> ScalarField<T> for LqgField<T> {
    fn value(&self, l: T) -> Result<T> {
        Ok(self.eval(l))
    }
}

/// A coordinate map `ζ` with its derivative.
pub trait ConformalMap<T> {
    fn value(&self, l: T) -> T;
    fn derivative(&self, l: T) -> T;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl<T: Real> ConformalMap<T> for IdentityMap {
    fn value(&self, l: T) -> T {
        l
    }
    fn derivative(&self, _l: T) -> T {
        T::one()
    }
}

/// `ζ(l) = c·l`.
#[derive(Debug, Clone, Copy)]
pub struct ScaleMap<T>(pub T);

impl<T: Real> ConformalMap<T> for ScaleMap<T> {
    fn value(&self, l: T) -> T {
        self.0 * l
    }
    fn derivative(&self, _l: T) -> T {
        self.0
    }
}

/// A map given by two closures.
pub struct FnMap<F, D> {
    pub value: F,
    pub derivative: D,
}

impl<T: Real, F: Fn(T) -> T, D: Fn(T) -> T> ConformalMap<T> for FnMap<F, D> {
    fn value(&self, l: T) -> T {
        (self.value)(l)
    }
    fn derivative(&self, l: T) -> T {
        (self.derivative)(l)
    }
}

/// `l ↦ k(ζ(l)) + Q log|ζ′(l)|`.
pub struct ShiftedField<'a, T> {
    field: &'a dyn ScalarField<T>,
    map: &'a dyn ConformalMap<T>,
    q: T,
}

impl<T: Real> ScalarField<T> for ShiftedField<'_, T> {
    fn value(&self, l: T) -> Result<T> {
        let d = self.map.derivative(l);
        if d == T::zero() || !d.is_finite() {
            return Err(Error::numerical(format!("conformal map derivative vanishes at l = {l}")));
        }
        Ok(self.field.value(self.map.value(l))? + self.q * d.abs().ln())
    }
}

/// The field seen through the coordinate change `ζ`.
pub fn coordinate_change<'a, T: Real>(
    field: &'a dyn ScalarField<T>,
    map: &'a dyn ConformalMap<T>,
    gamma: T,
) -> Result<ShiftedField<'a, T>> {
    Ok(ShiftedField { field, map, q: q_constant(gamma)? })
}
