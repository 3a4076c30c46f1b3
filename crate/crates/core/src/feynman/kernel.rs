use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::hjb::{GridTag, ValueGrid};
use crate::quadrature::gauss_legendre;
use crate::scalar::Real;

/// Second-order expansion of `f` around a target point:
/// `f(x + m) ≈ f − Vᵀm + mᵀHm` with `H = ½∇²f` and `V = −∇f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBlock<T> {
    pub hessian: [[T; 2]; 2],
    pub shift: [T; 2],
    pub epsilon: T,
}

/// Normalization of the 2-D Gaussian integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianMode {
    /// `π / (ε √|H|)`, the true mass of `e^{−ε mᵀHm}`.
    #[default]
    Exact,
    /// `π / √(ε |H|)`, which is `√ε` times the true mass.
    Paper,
}

impl<T: Real> KernelBlock<T> {
    pub fn new(hessian: [[T; 2]; 2], shift: [T; 2], epsilon: T) -> Self {
        KernelBlock { hessian, shift, epsilon }
    }

    /// Block built from the gradient and Hessian of `f`.
    pub fn from_f_derivatives(gradient: [T; 2], hessian_of_f: [[T; 2]; 2], epsilon: T) -> Self {
        let h = T::half();
        KernelBlock {
            hessian: [[h * hessian_of_f[0][0], h * hessian_of_f[0][1]], [h * hessian_of_f[1][0], h * hessian_of_f[1][1]]],
            shift: [-gradient[0], -gradient[1]],
            epsilon,
        }
    }

    fn check(&self) -> Result<T> {
        let [[a, b], [c, d]] = self.hessian;
        ensure(self.epsilon > T::zero() && self.epsilon.is_finite(), || "epsilon must be positive".into())?;
        ensure([a, b, c, d].iter().all(|v| v.is_finite()), || "kernel block must be finite".into())?;
        let tol = T::lit(1e-12) * (a.abs() + d.abs() + b.abs()).max(T::one());
        ensure((b - c).abs() <= tol, || "kernel block hessian must be symmetric".into())?;
        let det = a * d - b * c;
        // Cholesky succeeds iff a > 0 and the Schur complement d − b²/a > 0.
        if !(a > T::zero() && det > T::zero()) {
            return Err(Error::numerical("kernel block not positive definite"));
        }
        Ok(det)
    }

    /// `(H⁻¹)`.
    fn inverse(&self, det: T) -> [[T; 2]; 2] {
        let [[a, b], [_, d]] = self.hessian;
        [[d / det, -b / det], [-b / det, a / det]]
    }
}

/// Mass of `e^{−ε mᵀHm}` over the plane under `mode`.
pub fn gaussian_mass<T: Real>(block: &KernelBlock<T>, mode: GaussianMode) -> Result<T> {
    let det = block.check()?;
    let pi = T::PI();
    let eps = block.epsilon;
    Ok(match mode {
        GaussianMode::Exact => pi / (eps * det.sqrt()),
        GaussianMode::Paper => pi / (eps * det).sqrt(),
    })
}

/// `∫ exp{ε(Vᵀm − mᵀHm)} dm`, i.e. the mass times `exp[(ε/4) VᵀH⁻¹V]`.
pub fn shifted_gaussian_integral<T: Real>(block: &KernelBlock<T>, mode: GaussianMode) -> Result<T> {
    let det = block.check()?;
    let inv = block.inverse(det);
    let [v1, v2] = block.shift;
    let quad = v1 * (inv[0][0] * v1 + inv[0][1] * v2) + v2 * (inv[1][0] * v1 + inv[1][1] * v2);
    let e = crate::lqg::exp_checked(block.epsilon / T::lit(4.0) * quad)?;
    Ok(gaussian_mass(block, mode)? * e)
}

/// Size of the integration window around each target point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Localization<T> {
    /// `k` Gaussian standard deviations `√((H⁻¹)ᵢᵢ / 2ε)` per axis.
    Widths(T),
    /// `|ξ₁| ≤ √(η₁ε/x)`, `|ξ₂| ≤ √(η₂ε/v)`; needs `x, v > 0`.
    Bounds { eta1: T, eta2: T },
}

impl<T: Real> Default for Localization<T> {
    fn default() -> Self {
        Localization::Widths(T::lit(6.0))
    }
}

/// One slice of the localized kernel:
/// `Ψ'(x) = (1/L) ∫_window exp{−ε [f(x + ξ) + ξᵀHξ]} Ψ(x + ξ) dξ`,
/// with `L` the Gaussian mass under `mode`. `f` is evaluated at the shifted
/// point; `H` from `block` supplies the Gaussian localization (its shift is
/// not used). `Ψ` is interpolated bilinearly and the window is integrated
/// with an `nodes × nodes` Gauss–Legendre rule.
pub fn transition_step<T: Real>(
    psi: &ValueGrid<T>,
    f: &(dyn Fn(T, T) -> T + Sync),
    block: &KernelBlock<T>,
    localization: Localization<T>,
    mode: GaussianMode,
    nodes: usize,
) -> Result<ValueGrid<T>> {
    psi.validate()?;
    ensure(psi.values.iter().all(|&p| p >= T::zero()), || "Ψ must be nonnegative".into())?;
    ensure(nodes >= 2, || "need at least 2 quadrature nodes per axis".into())?;
    let det = block.check()?;
    let inv = block.inverse(det);
    let eps = block.epsilon;
    let mass = gaussian_mass(block, mode)?;
    let (gx, gw) = gauss_legendre(nodes);
    let gx: Vec<T> = gx.into_iter().map(T::lit).collect();
    let gw: Vec<T> = gw.into_iter().map(T::lit).collect();
    let [[h11, h12], [_, h22]] = block.hessian;
    let xs = psi.x.coords();
    let vs = psi.v.coords();
    let mut out = Array2::zeros(psi.values.dim());
    for ((i, j), o) in out.indexed_iter_mut() {
        let (x, v) = (xs[i], vs[j]);
        let (w1, w2) = match localization {
            Localization::Widths(k) => {
                let two_eps = T::two() * eps;
                (k * (inv[0][0] / two_eps).sqrt(), k * (inv[1][1] / two_eps).sqrt())
            }
            Localization::Bounds { eta1, eta2 } => {
                if !(x > T::zero() && v > T::zero()) {
                    return Err(Error::validation(format!(
                        "empty localization window at (x={x}, v={v}): bounds need x, v > 0"
                    )));
                }
                ((eta1 * eps / x).sqrt(), (eta2 * eps / v).sqrt())
            }
        };
        let mut acc = T::zero();
        for (a, wa) in gx.iter().zip(&gw) {
            let xi1 = w1 * *a;
            for (b, wb) in gx.iter().zip(&gw) {
                let xi2 = w2 * *b;
                let quad = h11 * xi1 * xi1 + T::two() * h12 * xi1 * xi2 + h22 * xi2 * xi2;
                let k = (-eps * (f(x + xi1, v + xi2) + quad)).exp();
                acc = acc + *wa * *wb * k * psi.interpolate(x + xi1, v + xi2);
            }
        }
        let val = acc * w1 * w2 / mass;
        if !val.is_finite() {
            return Err(Error::numerical(format!("transition kernel overflow at (x={x}, v={v})")));
        }
        *o = val;
    }
    Ok(psi.with_values(out, GridTag::Psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::Axis;
    use std::f64::consts::PI;

    fn eye(eps: f64, shift: [f64; 2]) -> KernelBlock<f64> {
        KernelBlock::new([[1.0, 0.0], [0.0, 1.0]], shift, eps)
    }

    #[test]
    fn closed_form_examples() {
        for mode in [GaussianMode::Exact, GaussianMode::Paper] {
            assert!((shifted_gaussian_integral(&eye(1.0, [0.0, 0.0]), mode).unwrap() - PI).abs() < 1e-15);
        }
        assert!((shifted_gaussian_integral(&eye(4.0, [0.0, 0.0]), GaussianMode::Exact).unwrap() - PI / 4.0).abs() < 1e-15);
        let v = shifted_gaussian_integral(&eye(1.0, [2.0, 0.0]), GaussianMode::Exact).unwrap();
        assert!((v - PI * std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_blocks() {
        let nd = KernelBlock::new([[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0], 1.0);
        let err = shifted_gaussian_integral(&nd, GaussianMode::Exact).unwrap_err();
        assert!(err.to_string().contains("not positive definite"));
        let asym = KernelBlock::new([[1.0, 0.1], [0.0, 1.0]], [0.0, 0.0], 1.0);
        assert!(shifted_gaussian_integral(&asym, GaussianMode::Exact).unwrap_err().is_validation());
    }

    #[test]
    fn mode_ratio_is_sqrt_eps() {
        for eps in [0.1, 0.5, 2.0, 9.0] {
            let b = KernelBlock::new([[2.0, 0.3], [0.3, 0.7]], [0.4, -1.0], eps);
            let r = shifted_gaussian_integral(&b, GaussianMode::Paper).unwrap()
                / shifted_gaussian_integral(&b, GaussianMode::Exact).unwrap();
            assert!((r - f64::sqrt(eps)).abs() < 1e-12);
        }
    }

    fn grid(f: impl Fn(f64, f64) -> f64) -> ValueGrid<f64> {
        let ax = Axis::new(-0.8, 0.8, 161).unwrap();
        ValueGrid::from_fn(ax, ax, 0.0, GridTag::Psi, f).unwrap()
    }

    #[test]
    fn transition_identity_zero_and_constant() {
        let psi = grid(|x, v| (-(x * x + 0.5 * v * v)).exp());
        let block = eye(2000.0, [0.0, 0.0]);
        let loc = Localization::default();
        let out = transition_step(&psi, &|_, _| 0.0, &block, loc, GaussianMode::Exact, 24).unwrap();
        let (i, j) = psi.nearest(0.3, -0.4);
        assert!((out.values[[i, j]] - psi.values[[i, j]]).abs() < 1e-3, "{} {}", out.values[[i, j]], psi.values[[i, j]]);

        let zero = grid(|_, _| 0.0);
        let out0 = transition_step(&zero, &|_, _| 3.0, &block, loc, GaussianMode::Exact, 8).unwrap();
        assert!(out0.values.iter().all(|&v| v == 0.0));

        let c = 1e-4;
        let outc = transition_step(&psi, &|_, _| c, &block, loc, GaussianMode::Exact, 24).unwrap();
        let f = (-2000.0 * c).exp();
        for (a, b) in outc.values.iter().zip(&out.values) {
            assert!((a - f * b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
        assert!(outc.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn bounds_need_positive_state() {
        let psi = grid(|_, _| 1.0);
        let err = transition_step(
            &psi,
            &|_, _| 0.0,
            &eye(10.0, [0.0, 0.0]),
            Localization::Bounds { eta1: 1.0, eta2: 1.0 },
            GaussianMode::Paper,
            4,
        )
        .unwrap_err();
        assert!(err.is_validation());
    }
}
