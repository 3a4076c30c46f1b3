use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Real;

/// Uniform axis with `n` nodes from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis<T> {
    pub min: T,
    pub max: T,
    pub n: usize,
}

impl<T: Real> Axis<T> {
    pub fn new(min: T, max: T, n: usize) -> Result<Self> {
        let a = Axis { min, max, n };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.min.is_finite() && self.max.is_finite() && self.max > self.min, || {
            "axis bounds must be finite with max > min".into()
        })?;
        ensure(self.n >= 3, || "axis needs at least 3 nodes".into())
    }

    pub fn spacing(&self) -> T {
        (self.max - self.min) / T::count(self.n - 1)
    }

    pub fn coord(&self, i: usize) -> T {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + T::count(i) * self.spacing()
        }
    }

    pub fn coords(&self) -> Vec<T> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Cell index and fractional offset of `x`, clamped to the axis.
    fn locate(&self, x: T) -> (usize, T) {
        let h = self.spacing();
        let t = ((x - self.min) / h).max(T::zero()).min(T::count(self.n - 1));
        let i = t.floor().to_usize().unwrap_or(0).min(self.n - 2);
        (i, t - T::count(i))
    }
}

/// What a [`ValueGrid`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridTag {
    /// Value function `Φ̄`.
    PhiBar,
    /// Desirability `Θ = exp(−Φ̄/ω)`.
    Theta,
    /// Wave function `Ψ`.
    Psi,
    /// Feedback control `u*`.
    Control,
}

/// A scalar field on an `(x, v)` grid at one time; `values[[ix, iv]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid<T> {
    pub x: Axis<T>,
    pub v: Axis<T>,
    pub values: Array2<T>,
    pub time: T,
    pub tag: GridTag,
}

impl<T: Real> ValueGrid<T> {
    /// Samples `f(x, v)` at every node.
    pub fn from_fn(x: Axis<T>, v: Axis<T>, time: T, tag: GridTag, f: impl Fn(T, T) -> T) -> Result<Self> {
        x.validate()?;
        v.validate()?;
        let xs = x.coords();
        let vs = v.coords();
        let values = Array2::from_shape_fn((x.n, v.n), |(i, j)| f(xs[i], vs[j]));
        let g = ValueGrid { x, v, values, time, tag };
        g.validate()?;
        Ok(g)
    }

    pub fn constant(x: Axis<T>, v: Axis<T>, time: T, tag: GridTag, c: T) -> Result<Self> {
        Self::from_fn(x, v, time, tag, |_, _| c)
    }

    /// Same axes and time, new values and tag.
    pub fn with_values(&self, values: Array2<T>, tag: GridTag) -> Self {
        ValueGrid { x: self.x, v: self.v, values, time: self.time, tag }
    }

    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        self.v.validate()?;
        ensure(self.values.dim() == (self.x.n, self.v.n), || "grid values do not match the axes".into())?;
        ensure(self.values.iter().all(|v| v.is_finite()), || "grid values must be finite".into())?;
        if self.tag == GridTag::Theta {
            ensure(self.values.iter().all(|&v| v > T::zero()), || "theta grid must be strictly positive".into())?;
        }
        Ok(())
    }

    /// Bilinear interpolation, clamped to the grid.
    pub fn interpolate(&self, x: T, v: T) -> T {
        let (i, a) = self.x.locate(x);
        let (j, b) = self.v.locate(v);
        let one = T::one();
        let f = &self.values;
        (one - a) * (one - b) * f[[i, j]]
            + a * (one - b) * f[[i + 1, j]]
            + (one - a) * b * f[[i, j + 1]]
            + a * b * f[[i + 1, j + 1]]
    }

    /// Node nearest to `(x, v)`.
    pub fn nearest(&self, x: T, v: T) -> (usize, usize) {
        let near = |ax: &Axis<T>, c: T| {
            let t = ((c - ax.min) / ax.spacing()).round().max(T::zero());
            t.to_usize().unwrap_or(0).min(ax.n - 1)
        };
        (near(&self.x, x), near(&self.v, v))
    }
}

/// First and second partial derivatives of a grid field.
#[derive(Debug, Clone)]
pub struct Derivatives<T> {
    pub dx: Array2<T>,
    pub dv: Array2<T>,
    pub dxx: Array2<T>,
    pub dvv: Array2<T>,
    pub dxv: Array2<T>,
}

fn d1<T: Real>(f: &[T], i: usize, h: T) -> T {
    let n = f.len();
    let two = T::two();
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    if i == 0 {
        (-three * f[0] + four * f[1] - f[2]) / (two * h)
    } else if i == n - 1 {
        (three * f[n - 1] - four * f[n - 2] + f[n - 3]) / (two * h)
    } else {
        (f[i + 1] - f[i - 1]) / (two * h)
    }
}

fn d2<T: Real>(f: &[T], i: usize, h: T) -> T {
    let n = f.len();
    let h2 = h * h;
    let two = T::two();
    if n >= 4 && (i == 0 || i == n - 1) {
        let (a, b, c, d) = if i == 0 { (f[0], f[1], f[2], f[3]) } else { (f[n - 1], f[n - 2], f[n - 3], f[n - 4]) };
        (two * a - T::lit(5.0) * b + T::lit(4.0) * c - d) / h2
    } else {
        let k = i.clamp(1, n - 2);
        (f[k + 1] - two * f[k] + f[k - 1]) / h2
    }
}

fn apply_x<T: Real>(a: &Array2<T>, h: T, op: fn(&[T], usize, T) -> T) -> Array2<T> {
    let (nx, nv) = a.dim();
    let mut out = Array2::zeros((nx, nv));
    let mut col = vec![T::zero(); nx];
    for j in 0..nv {
        for i in 0..nx {
            col[i] = a[[i, j]];
        }
        for i in 0..nx {
            out[[i, j]] = op(&col, i, h);
        }
    }
    out
}

fn apply_v<T: Real>(a: &Array2<T>, h: T, op: fn(&[T], usize, T) -> T) -> Array2<T> {
    let (nx, nv) = a.dim();
    let mut out = Array2::zeros((nx, nv));
    let mut row = vec![T::zero(); nv];
    for i in 0..nx {
        for j in 0..nv {
            row[j] = a[[i, j]];
        }
        for j in 0..nv {
            out[[i, j]] = op(&row, j, h);
        }
    }
    out
}

/// Central differences in the interior, second-order one-sided stencils on
/// the boundary; the mixed derivative is the product of the 1-D stencils.
pub fn derivatives<T: Real>(grid: &ValueGrid<T>) -> Derivatives<T> {
    let (hx, hv) = (grid.x.spacing(), grid.v.spacing());
    let dx = apply_x(&grid.values, hx, d1);
    let dv = apply_v(&grid.values, hv, d1);
    let dxx = apply_x(&grid.values, hx, d2);
    let dvv = apply_v(&grid.values, hv, d2);
    let dxv = apply_v(&dx, hv, d1);
    Derivatives { dx, dv, dxx, dvv, dxv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivatives_exact() {
        let ax = Axis::new(-1.0, 2.0, 13).unwrap();
        let av = Axis::new(0.0, 1.0, 9).unwrap();
        let g = ValueGrid::from_fn(ax, av, 0.0, GridTag::PhiBar, |x: f64, v| 1.0 + 2.0 * x - v + x * x + 3.0 * x * v - 0.5 * v * v)
            .unwrap();
        let d = derivatives(&g);
        for i in 0..ax.n {
            for j in 0..av.n {
                let (x, v) = (ax.coord(i), av.coord(j));
                assert!((d.dx[[i, j]] - (2.0 + 2.0 * x + 3.0 * v)).abs() < 1e-12);
                assert!((d.dv[[i, j]] - (-1.0 + 3.0 * x - v)).abs() < 1e-12);
                assert!((d.dxx[[i, j]] - 2.0).abs() < 1e-9);
                assert!((d.dvv[[i, j]] + 1.0).abs() < 1e-9);
                assert!((d.dxv[[i, j]] - 3.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let ax = Axis::new(0.0, 1.0, 5).unwrap();
        let g = ValueGrid::from_fn(ax, ax, 0.0, GridTag::Psi, |x: f64, v| 1.0 + x - 2.0 * v + x * v).unwrap();
        let (x, v) = (0.33, 0.71);
        assert!((g.interpolate(x, v) - (1.0 + x - 2.0 * v + x * v)).abs() < 1e-14);
        assert_eq!(g.interpolate(-5.0, 0.0), 1.0);
        assert_eq!(g.nearest(0.26, 0.9), (1, 4));
    }

    #[test]
    fn theta_must_be_positive() {
        let ax = Axis::new(0.0, 1.0, 3).unwrap();
        assert!(ValueGrid::constant(ax, ax, 0.0, GridTag::Theta, 0.0).is_err());
        assert!(ValueGrid::constant(ax, ax, 0.0, GridTag::PhiBar, 0.0).is_ok());
        assert!(Axis::new(0.0, 1.0, 2).is_err());
    }
}
