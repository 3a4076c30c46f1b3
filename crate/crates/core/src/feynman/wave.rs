use ndarray::Array2;

use crate::error::{ensure, Error, Result};
use crate::hjb::{GridTag, ValueGrid};
use crate::scalar::Real;

/// `f(s, x, v, u)`.
pub type WaveF<'a, T> = &'a (dyn Fn(T, T, T, T) -> T + Sync);
/// `u(x, v)`.
pub type WaveControl<'a, T> = &'a (dyn Fn(T, T) -> T + Sync);

fn evolve_point<T: Real>(psi0: T, f: WaveF<'_, T>, control: WaveControl<'_, T>, s: T, x: T, v: T) -> Result<T> {
    if psi0 == T::zero() {
        return Ok(T::zero());
    }
    let fv = f(s, x, v, control(x, v));
    let out = (-s * fv).exp() * psi0;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::numerical(format!("wave evolution not finite at (s={s}, x={x}, v={v})")))
    }
}

/// `Ψ_s(x, v) = exp{−s·f(s, x, v, u(x, v))}·Ψ₀(x, v)` at every node.
pub fn wave_evolution<T: Real>(
    psi0: &ValueGrid<T>,
    f: WaveF<'_, T>,
    control: WaveControl<'_, T>,
    s: T,
) -> Result<ValueGrid<T>> {
    psi0.validate()?;
    ensure(s >= T::zero() && s.is_finite(), || format!("s = {s} must be nonnegative"))?;
    let xs = psi0.x.coords();
    let vs = psi0.v.coords();
    let mut out = Array2::zeros(psi0.values.dim());
    for ((i, j), o) in out.indexed_iter_mut() {
        *o = evolve_point(psi0.values[[i, j]], f, control, s, xs[i], vs[j])?;
    }
    let mut g = psi0.with_values(out, GridTag::Psi);
    g.time = s;
    Ok(g)
}

/// Largest `|∂Ψ/∂s + f·Ψ + s·(∂f/∂s)·Ψ|` over `probes`, with both
/// `s`-derivatives taken by central differences of width `ds`. `Ψ₀` is
/// interpolated bilinearly between nodes.
pub fn wave_pde_residual<T: Real>(
    psi0: &ValueGrid<T>,
    f: WaveF<'_, T>,
    control: WaveControl<'_, T>,
    s: T,
    probes: &[(T, T)],
    ds: T,
) -> Result<T> {
    psi0.validate()?;
    ensure(ds > T::zero() && ds.is_finite(), || "ds must be positive".into())?;
    ensure(s.is_finite(), || "s must be finite".into())?;
    let two_ds = T::two() * ds;
    let mut worst = T::zero();
    for &(x, v) in probes {
        let p0 = psi0.interpolate(x, v);
        let u = control(x, v);
        let psi = evolve_point(p0, f, control, s, x, v)?;
        let dpsi = (evolve_point(p0, f, control, s + ds, x, v)? - evolve_point(p0, f, control, s - ds, x, v)?) / two_ds;
        let fv = f(s, x, v, u);
        let fs = (f(s + ds, x, v, u) - f(s - ds, x, v, u)) / two_ds;
        let r = (dpsi + fv * psi + s * fs * psi).abs();
        if !r.is_finite() {
            return Err(Error::numerical(format!("wave residual not finite at (x={x}, v={v})")));
        }
        worst = worst.max(r);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::Axis;

    fn psi0(c: Option<f64>) -> ValueGrid<f64> {
        let ax = Axis::new(0.1, 2.0, 11).unwrap();
        match c {
            Some(c) => ValueGrid::constant(ax, ax, 0.0, GridTag::Psi, c).unwrap(),
            None => ValueGrid::from_fn(ax, ax, 0.0, GridTag::Psi, |x, v| (-(x * x + v * v)).exp()).unwrap(),
        }
    }

    #[test]
    fn trivial_cases() {
        let p = psi0(None);
        let f = |_: f64, x: f64, v: f64, u: f64| x * v + u;
        let u = |x: f64, _: f64| 0.5 * x;
        assert_eq!(wave_evolution(&p, &f, &u, 0.0).unwrap().values, p.values);
        assert_eq!(wave_evolution(&p, &|_, _, _, _| 0.0, &u, 3.0).unwrap().values, p.values);
        let one = wave_evolution(&psi0(Some(1.0)), &|_, _, _, _| 1.0, &u, 2.0).unwrap();
        assert!(one.values.iter().all(|&y| (y - (-2.0f64).exp()).abs() < 1e-16));
        assert!((one.values[[0, 0]] - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn residuals() {
        let p = psi0(None);
        let probes = [(0.3, 0.4), (1.0, 1.5), (1.7, 0.2)];
        let u = |x: f64, v: f64| x - v;
        let f = |_: f64, x: f64, v: f64, u: f64| 0.5 * x * v + u * u;
        assert!(wave_pde_residual(&p, &f, &u, 0.7, &probes, 1e-4).unwrap() <= 1e-8);
        let ft = |s: f64, x: f64, _: f64, u: f64| (s * x).sin() + u;
        assert!(wave_pde_residual(&p, &ft, &u, 0.7, &probes, 1e-4).unwrap() <= 1e-8);
        assert_eq!(wave_pde_residual(&p, &|_, _, _, _| 0.0, &u, 0.7, &probes, 1e-4).unwrap(), 0.0);
        assert_eq!(wave_pde_residual(&psi0(Some(0.0)), &f, &u, 0.7, &probes, 1e-4).unwrap(), 0.0);
    }
}
