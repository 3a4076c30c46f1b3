//! Empirical checks of the coefficient regularity assumptions and of the
//! infinitesimal generator.

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::model::{CrossTerm, DiffusionBlock};
use crate::rng::{normal, stream, stream_rng, uniform};
use crate::scalar::Real;
use crate::sde::FishCoefficients;

/// Region sampled by [`check_growth_lipschitz`]. The `(x, v)` half-widths
/// are doubled twice to test whether the constants stay bounded; time and
/// control ranges are held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleBox<T> {
    pub time: (T, T),
    pub x_half_width: T,
    pub v_half_width: T,
    pub control: (T, T),
}

/// Smallest constants consistent with the samples at one box size.
///
/// `k1`/`k2` bound `|μ| + |σ|` by `K (1 + |(x, v)|)` for the position and
/// velocity equations; `k3`/`k4` bound their increments by `K |Δ(x, v)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants<T> {
    pub scale: T,
    pub k1: T,
    pub k2: T,
    pub k3: T,
    pub k4: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport<T> {
    /// Constants at box scales 1, 2 and 4.
    pub by_scale: Vec<GrowthConstants<T>>,
    /// Names of the constants that grew by more than 1.5× on both doublings.
    pub unbounded: Vec<String>,
    /// Sampled `(s, x, v, u)` points at the largest scale whose ratio exceeds
    /// twice the smallest-scale constant, for every unbounded constant.
    pub violations: Vec<(String, [T; 4])>,
}

impl<T: Real> GrowthReport<T> {
    pub fn conforms(&self) -> bool {
        self.unbounded.is_empty()
    }
}

const GROWTH_RATIO: f64 = 1.5;
const MAX_VIOLATIONS: usize = 16;

/// Estimates linear-growth and Lipschitz constants of the coefficients over
/// random samples, and flags constants that keep growing with the box size.
pub fn check_growth_lipschitz<T: Real>(
    coeffs: &dyn FishCoefficients<T>,
    sample_box: &SampleBox<T>,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthReport<T>> {
    ensure(n_samples >= 1, || "n_samples must be at least 1".into())?;
    ensure(
        [sample_box.time.0, sample_box.time.1, sample_box.x_half_width, sample_box.v_half_width, sample_box.control.0, sample_box.control.1]
            .iter()
            .all(|c| c.is_finite()),
        || "sample box must be finite".into(),
    )?;
    // Unit draws, reused at every scale so the estimates are comparable.
    let mut rng = stream_rng(seed, stream::GROWTH_CHECK, 0);
    let draws: Vec<[T; 7]> = (0..n_samples)
        .map(|_| {
            let one = T::one();
            [
                uniform(&mut rng, sample_box.time.0, sample_box.time.1),
                uniform(&mut rng, -one, one),
                uniform(&mut rng, -one, one),
                uniform(&mut rng, sample_box.control.0, sample_box.control.1),
                uniform(&mut rng, -one, one),
                uniform(&mut rng, -one, one),
                uniform(&mut rng, -one, one),
            ]
        })
        .collect();

    let names = ["k1", "k2", "k3", "k4"];
    let mut by_scale = Vec::new();
    let mut worst: Vec<Vec<(T, [T; 4])>> = vec![Vec::new(); 4];
    for (si, scale) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        let scale = T::lit(scale);
        let (hx, hv) = (sample_box.x_half_width * scale, sample_box.v_half_width * scale);
        let mut k = [T::zero(); 4];
        for d in &draws {
            let (s, u) = (d[0], d[3]);
            let (x, v) = (d[1] * hx, d[2] * hv);
            // Second point: a random offset inside the same box.
            let (y, w) = (d[4] * hx, d[5] * hv);
            let a = coeffs.at(s, x, v, u);
            let b = coeffs.at(s, y, w, u);
            let norm = (x * x + v * v).sqrt();
            let dist = ((x - y) * (x - y) + (v - w) * (v - w)).sqrt();
            let mut ratios = [
                (a.mu1.abs() + a.sigma1.abs()) / (T::one() + norm),
                (a.mu2.abs() + a.sigma2.abs()) / (T::one() + norm),
                T::zero(),
                T::zero(),
            ];
            if dist > T::epsilon() {
                ratios[2] = ((a.mu1 - b.mu1).abs() + (a.sigma1 - b.sigma1).abs()) / dist;
                ratios[3] = ((a.mu2 - b.mu2).abs() + (a.sigma2 - b.sigma2).abs()) / dist;
            }
            for c in 0..4 {
                k[c] = k[c].max(ratios[c]);
                if si == 2 {
                    worst[c].push((ratios[c], [s, x, v, u]));
                }
            }
        }
        by_scale.push(GrowthConstants { scale, k1: k[0], k2: k[1], k3: k[2], k4: k[3] });
    }

    let get = |g: &GrowthConstants<T>, c: usize| [g.k1, g.k2, g.k3, g.k4][c];
    let mut unbounded = Vec::new();
    let mut violations = Vec::new();
    let tol = T::lit(1e-12);
    for c in 0..4 {
        let (k1, k2, k4) = (get(&by_scale[0], c), get(&by_scale[1], c), get(&by_scale[2], c));
        let grows = |lo: T, hi: T| hi > T::lit(GROWTH_RATIO) * lo + tol;
        if grows(k1, k2) && grows(k2, k4) {
            unbounded.push(names[c].to_string());
            let limit = T::two() * k1;
            let mut bad: Vec<_> = worst[c].iter().filter(|(r, _)| *r > limit).collect();
            bad.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
            violations.extend(bad.into_iter().take(MAX_VIOLATIONS).map(|(_, p)| (names[c].to_string(), *p)));
        }
    }
    Ok(GrowthReport { by_scale, unbounded, violations })
}

/// Step sizes for central differences at magnitude `x`.
fn fd_steps<T: Real>(x: T) -> (T, T) {
    let scale = x.abs().max(T::one());
    let eps = T::epsilon();
    (eps.cbrt() * scale, eps.sqrt().sqrt() * scale)
}

/// `A h = ∂h/∂s + μ₁ h_x + μ₂ h_v + ½(σ₁² h_xx + 2·cov·h_xv + σ₂² h_vv)` at
/// `(s, x, v)` under control `u`, with derivatives by central differences.
#[allow(clippy::too_many_arguments)]
pub fn generator_apply<T: Real>(
    coeffs: &dyn FishCoefficients<T>,
    corr: T,
    cross_term: CrossTerm,
    h: &dyn Fn(T, T, T) -> T,
    s: T,
    x: T,
    v: T,
    u: T,
) -> T {
    let c = coeffs.at(s, x, v, u);
    let block = DiffusionBlock::new(c.sigma1, c.sigma2, corr, cross_term);
    let (ds, _) = fd_steps(s);
    let (dx1, dx2) = fd_steps(x);
    let (dv1, dv2) = fd_steps(v);
    let two = T::two();
    let h_s = (h(s + ds, x, v) - h(s - ds, x, v)) / (two * ds);
    let h_x = (h(s, x + dx1, v) - h(s, x - dx1, v)) / (two * dx1);
    let h_v = (h(s, x, v + dv1) - h(s, x, v - dv1)) / (two * dv1);
    let h0 = h(s, x, v);
    let h_xx = (h(s, x + dx2, v) - two * h0 + h(s, x - dx2, v)) / (dx2 * dx2);
    let h_vv = (h(s, x, v + dv2) - two * h0 + h(s, x, v - dv2)) / (dv2 * dv2);
    let h_xv = (h(s, x + dx2, v + dv2) - h(s, x + dx2, v - dv2) - h(s, x - dx2, v + dv2) + h(s, x - dx2, v - dv2))
        / (T::lit(4.0) * dx2 * dv2);
    h_s + c.mu1 * h_x + c.mu2 * h_v + block.second_order(h_xx, h_xv, h_vv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorEstimate<T> {
    pub value: T,
    pub stderr: T,
}

/// Monte Carlo generator `(E[h(Y_{s+dt})] − h(Y_s)) / dt` over `n` single
/// Euler–Maruyama steps with correlated noise. The estimator carries an
/// `O(dt)` bias proportional to the curvature of `h`.
#[allow(clippy::too_many_arguments)]
pub fn generator_mc<T: Real>(
    coeffs: &dyn FishCoefficients<T>,
    corr: T,
    cross_term: CrossTerm,
    h: &dyn Fn(T, T, T) -> T,
    s: T,
    x: T,
    v: T,
    u: T,
    dt: T,
    n: usize,
    seed: u64,
) -> Result<GeneratorEstimate<T>> {
    ensure(dt > T::zero(), || "dt must be positive".into())?;
    ensure(n >= 2, || "n must be at least 2".into())?;
    let c = coeffs.at(s, x, v, u);
    let (l11, l21, l22) = DiffusionBlock::new(c.sigma1, c.sigma2, corr, cross_term).loading()?;
    let sq = dt.sqrt();
    let h0 = h(s, x, v);
    let mut rng = stream_rng(seed, stream::GENERATOR, 0);
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..n {
        let z1: T = normal(&mut rng);
        let z2: T = normal(&mut rng);
        let y = x + c.mu1 * dt + l11 * sq * z1;
        let w = v + c.mu2 * dt + sq * (l21 * z1 + l22 * z2);
        let d = ((h(s + dt, y, w) - h0) / dt).as_f64();
        sum += d;
        sum_sq += d * d;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(GeneratorEstimate { value: T::lit(mean), stderr: T::lit((var / nf).sqrt()) })
}
