use ndarray::Array2;

use crate::error::{ensure, Error, Result};
use crate::hjb::{GridTag, HjbProblem, ValueGrid};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// `c` in the stability bound `dt ≤ c·min(dx², dv²) / max(σ₁², σ₂²)`.
    pub stability: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions { stability: T::lit(0.25) }
    }
}

/// Integrates `−Θ_s = −(W/ω)Θ + μ₁Θ_x + μ₂Θ_v + ½(σ₁²Θ_xx + 2·cov·Θ_xv + σ₂²Θ_vv)`
/// backward from `terminal` at `s_end` to `s_start` with explicit Euler steps,
/// central differences and zero-gradient (mirror) boundaries.
pub fn solve_theta_backward<T: Real>(
    problem: &HjbProblem<T>,
    terminal: &ValueGrid<T>,
    s_start: T,
    s_end: T,
    n_steps: usize,
    options: SolverOptions<T>,
) -> Result<ValueGrid<T>> {
    terminal.validate()?;
    ensure(terminal.values.iter().all(|&t| t > T::zero()), || "terminal Θ must be strictly positive".into())?;
    ensure(s_end > s_start, || "s_end must exceed s_start".into())?;
    ensure(n_steps >= 1, || "n_time_steps must be at least 1".into())?;
    let omega = problem.checked_omega()?;
    let (hx, hv) = (terminal.x.spacing(), terminal.v.spacing());
    let dt = (s_end - s_start) / T::count(n_steps);
    let dmax = problem.diffusion.xx().max(problem.diffusion.vv());
    if dmax > T::zero() {
        let limit = options.stability * (hx * hx).min(hv * hv) / dmax;
        ensure(dt <= limit, || {
            format!("explicit scheme unstable: dt = {dt} exceeds {limit}; use at least {} steps", ((s_end - s_start) / limit).ceil())
        })?;
    }

    let (nx, nv) = terminal.values.dim();
    let xs = terminal.x.coords();
    let vs = terminal.v.coords();
    let d = problem.diffusion;
    let two = T::two();
    let half = T::half();
    let (cxx, cvv, cxv) = (half * d.xx() / (hx * hx), half * d.vv() / (hv * hv), d.xv() / (T::lit(4.0) * hx * hv));
    let mut cur = terminal.values.clone();
    let mut next = Array2::zeros((nx, nv));
    let lo = |i: usize| if i == 0 { 1 } else { i - 1 };
    let hi = |i: usize, n: usize| if i == n - 1 { n - 2 } else { i + 1 };
    for k in (1..=n_steps).rev() {
        let s = s_start + T::count(k) * dt;
        for i in 0..nx {
            let (im, ip) = (lo(i), hi(i, nx));
            for j in 0..nv {
                let (jm, jp) = (lo(j), hi(j, nv));
                let c = cur[[i, j]];
                let (x, v) = (xs[i], vs[j]);
                let tx = (cur[[ip, j]] - cur[[im, j]]) / (two * hx);
                let tv = (cur[[i, jp]] - cur[[i, jm]]) / (two * hv);
                let lap = cxx * (cur[[ip, j]] - two * c + cur[[im, j]])
                    + cvv * (cur[[i, jp]] - two * c + cur[[i, jm]])
                    + cxv * (cur[[ip, jp]] - cur[[ip, jm]] - cur[[im, jp]] + cur[[im, jm]]);
                let op = -(problem.reward)(s, x, v) / omega * c
                    + (problem.drift_x)(s, x, v) * tx
                    + (problem.drift_v)(s, x, v) * tv
                    + lap;
                next[[i, j]] = c + dt * op;
            }
        }
        if let Some(bad) = next.iter().find(|&&t| !(t > T::zero() && t.is_finite())) {
            return Err(Error::numerical(format!(
                "Θ lost positivity ({bad}) at backward step {} of {n_steps} (s = {})",
                n_steps - k + 1,
                s - dt
            )));
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(ValueGrid { x: terminal.x, v: terminal.v, values: cur, time: s_start, tag: GridTag::Theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::Axis;
    use crate::model::{CrossTerm, DiffusionBlock};

    fn ax() -> Axis<f64> {
        Axis::new(-1.0, 1.0, 9).unwrap()
    }

    #[test]
    fn zero_potential_keeps_unit_theta() {
        let p = HjbProblem::new(|_, _, _| 0.0, |_, x, _| -x, |_, _, v| -v, DiffusionBlock::new(0.3, 0.3, 0.2, CrossTerm::Paper), 1.0)
            .unwrap();
        let term = ValueGrid::constant(ax(), ax(), 1.0, GridTag::Theta, 1.0).unwrap();
        let out = solve_theta_backward(&p, &term, 0.0, 1.0, 400, SolverOptions::default()).unwrap();
        assert!(out.values.iter().all(|&t| (t - 1.0).abs() < 1e-14));
        assert_eq!(out.time, 0.0);
    }

    #[test]
    fn stability_bound_enforced() {
        let p = HjbProblem::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0, DiffusionBlock::new(1.0, 1.0, 0.0, CrossTerm::Paper), 1.0)
            .unwrap();
        let term = ValueGrid::constant(ax(), ax(), 1.0, GridTag::Theta, 1.0).unwrap();
        let err = solve_theta_backward(&p, &term, 0.0, 1.0, 10, SolverOptions::default()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn positivity_loss_reported() {
        // dt·W/ω > 1 drives Θ negative in one step.
        let p = HjbProblem::new(|_, _, _| 50.0, |_, _, _| 0.0, |_, _, _| 0.0, DiffusionBlock::new(0.0, 0.0, 0.0, CrossTerm::Paper), 1.0)
            .unwrap()
            .with_omega(1.0);
        let term = ValueGrid::constant(ax(), ax(), 1.0, GridTag::Theta, 1.0).unwrap();
        let err = solve_theta_backward(&p, &term, 0.0, 1.0, 10, SolverOptions::default()).unwrap_err();
        assert!(err.to_string().contains("backward step 1"));
    }

    #[test]
    fn degenerate_omega() {
        let p = HjbProblem::new(|_, _, _| 1.0, |_, _, _| 0.0, |_, _, _| 0.0, DiffusionBlock::new(0.0, 0.0, 0.0, CrossTerm::Paper), 1.0)
            .unwrap();
        let term = ValueGrid::constant(ax(), ax(), 1.0, GridTag::Theta, 1.0).unwrap();
        let err = solve_theta_backward(&p, &term, 0.0, 1.0, 10, SolverOptions::default()).unwrap_err();
        assert!(err.to_string().contains("ω degenerate"));
    }
}
