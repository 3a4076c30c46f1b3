use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::hjb::{HjbProblem, ValueGrid};
use crate::rng::{normal, stream, stream_rng};
use crate::scalar::Real;
use crate::sde::steps_for;

/// Time stepping of the forward diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FkScheme {
    /// Predictor–corrector on the drift; weak order 2 for additive noise.
    #[default]
    Heun,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FkOptions<'a, T> {
    pub scheme: FkScheme,
    /// Terminal `Θ(τ, ·)`; `≡ 1` when absent.
    pub terminal: Option<&'a ValueGrid<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate<T> {
    pub value: T,
    pub stderr: T,
    pub n_paths: usize,
}

/// Monte Carlo estimate of `Θ(s, x, v) = E[exp(−∫ₛ^τ W/ω dr) Θ(τ, X_τ, V_τ)]`
/// with `(X, V)` the control-free diffusion of `problem` started at `(x, v)`.
///
/// The time integral uses the trapezoid rule on the step grid. Path `p` draws
/// from stream `(seed, p)`; results are reduced in path order.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_estimate<T: Real>(
    problem: &HjbProblem<T>,
    s: T,
    x: T,
    v: T,
    tau: T,
    n_paths: usize,
    dt: T,
    seed: u64,
    options: FkOptions<'_, T>,
) -> Result<FkEstimate<T>> {
    let omega = problem.checked_omega()?;
    ensure(tau > s, || format!("horizon τ = {tau} must exceed s = {s}"))?;
    ensure(n_paths >= 1, || "n_paths must be at least 1".into())?;
    ensure(s.is_finite() && x.is_finite() && v.is_finite(), || "start point must be finite".into())?;
    if let Some(t) = options.terminal {
        t.validate()?;
        ensure(t.values.iter().all(|&c| c >= T::zero()), || "terminal Θ must be nonnegative".into())?;
    }
    let n_steps = steps_for(tau - s, dt)?;
    let (l11, l21, l22) = problem.diffusion.loading()?;
    // Largest log-weight whose exponential stays comfortably finite.
    let log_cap = T::max_value().ln() - T::lit(8.0);

    let one_path = |p: usize| -> Result<f64> {
        let mut rng = stream_rng(seed, stream::FEYNMAN_KAC, p as u64);
        let sq = dt.sqrt();
        let (mut cx, mut cv) = (x, v);
        let mut t = s;
        let mut w_prev = (problem.reward)(t, cx, cv);
        let mut log_w = T::zero();
        for k in 0..n_steps {
            let z1: T = normal(&mut rng);
            let z2: T = normal(&mut rng);
            let nx = l11 * z1 * sq;
            let nv = (l21 * z1 + l22 * z2) * sq;
            let t_next = s + T::count(k + 1) * dt;
            let a1 = (problem.drift_x)(t, cx, cv);
            let a2 = (problem.drift_v)(t, cx, cv);
            let (px, pv) = (cx + a1 * dt + nx, cv + a2 * dt + nv);
            (cx, cv) = match options.scheme {
                FkScheme::EulerMaruyama => (px, pv),
                FkScheme::Heun => {
                    let b1 = (problem.drift_x)(t_next, px, pv);
                    let b2 = (problem.drift_v)(t_next, px, pv);
                    (cx + T::half() * (a1 + b1) * dt + nx, cv + T::half() * (a2 + b2) * dt + nv)
                }
            };
            t = t_next;
            if !(cx.is_finite() && cv.is_finite()) {
                return Err(Error::Diverged { path: p, step: k + 1 });
            }
            let w = (problem.reward)(t, cx, cv);
            log_w = log_w - T::half() * (w_prev + w) * dt / omega;
            w_prev = w;
            if !(log_w <= log_cap) {
                return Err(Error::numerical(format!(
                    "Feynman–Kac weight overflow on path {p} at step {} (log-weight {log_w}); rescale ω",
                    k + 1
                )));
            }
        }
        let term = options.terminal.map_or(T::one(), |g| g.interpolate(cx, cv));
        Ok(log_w.as_f64().exp() * term.as_f64())
    };

    let samples: Vec<Result<f64>> = (0..n_paths).into_par_iter().map(one_path).collect();
    let mut sum = 0.0;
    let mut vals = Vec::with_capacity(n_paths);
    for r in samples {
        let y = r?;
        sum += y;
        vals.push(y);
    }
    let n = n_paths as f64;
    let mean = sum / n;
    let stderr = if n_paths > 1 {
        let ss: f64 = vals.iter().map(|y| (y - mean) * (y - mean)).sum();
        (ss / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(FkEstimate { value: T::lit(mean), stderr: T::lit(stderr), n_paths })
}
