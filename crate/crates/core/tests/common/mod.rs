//! Reference numerics for the integration tests, written separately from the
//! library's own verification code.

#![allow(dead_code)]

/// Root of `f` by bisection after growing a symmetric bracket around 0.
pub fn bisect_root(f: impl Fn(f64) -> f64) -> Option<f64> {
    let mut half = 1.0;
    let (mut lo, mut hi) = loop {
        if f(-half).signum() != f(half).signum() {
            break (-half, half);
        }
        half *= 2.0;
        if half > 1e300 {
            return None;
        }
    };
    let mut f_lo = f(lo);
    while hi - lo > 0.0 {
        let mid = lo + 0.5 * (hi - lo);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == f_lo.signum() {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    Some(lo + 0.5 * (hi - lo))
}

fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction, absolute
/// tolerance `tol`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // Start from 8 panels so narrow peaks are not missed.
    let n = 8;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(f, lo, hi, fa, fm, fb, whole, tol / n as f64, 40)
        })
        .sum()
}

/// Iterated adaptive Simpson over a rectangle.
pub fn simpson_2d(f: &dyn Fn(f64, f64) -> f64, x: (f64, f64), y: (f64, f64), tol: f64) -> f64 {
    let width = y.1 - y.0;
    let inner = |a: f64| simpson(&|b| f(a, b), y.0, y.1, tol / (x.1 - x.0).max(1.0));
    simpson(&inner, x.0, x.1, tol * width.max(1.0))
}

/// Classical RK4 for `y' = g(t, y)` with a vector state.
pub fn rk4_vec(g: &dyn Fn(f64, &[f64]) -> Vec<f64>, t0: f64, t1: f64, y0: &[f64], steps: usize) -> Vec<f64> {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = g(t, &y);
        let k2 = g(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h));
        let k3 = g(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h));
        let k4 = g(t + h, &axpy(&y, &k3, h));
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// `Θ(0, x, v)` for `dY = B Y ds + noise with covariance rate Σ`, running
/// reward `W = q₀ + Yᵀ Q Y` and `Θ(τ) = 1`, from the Riccati system
/// `A' = Q/ω + BᵀA + AB − 2AΣA`, `c' = q₀/ω + tr(ΣA)` in time to go, with
/// `Θ = exp(−YᵀAY − c)`.
pub struct GaussianTheta {
    pub a: [[f64; 2]; 2],
    pub c: f64,
}

impl GaussianTheta {
    pub fn solve(q0: f64, q: [[f64; 2]; 2], b: [[f64; 2]; 2], sigma: [[f64; 2]; 2], omega: f64, tau: f64) -> Self {
        let mm = |x: [[f64; 2]; 2], y: [[f64; 2]; 2]| {
            let mut r = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
                }
            }
            r
        };
        let rhs = |_: f64, y: &[f64]| -> Vec<f64> {
            let a = [[y[0], y[1]], [y[2], y[3]]];
            let bt = [[b[0][0], b[1][0]], [b[0][1], b[1][1]]];
            let bta = mm(bt, a);
            let ab = mm(a, b);
            let asa = mm(mm(a, sigma), a);
            let sa = mm(sigma, a);
            let mut out = Vec::with_capacity(5);
            for i in 0..2 {
                for j in 0..2 {
                    out.push(q[i][j] / omega + bta[i][j] + ab[i][j] - 2.0 * asa[i][j]);
                }
            }
            out.push(q0 / omega + sa[0][0] + sa[1][1]);
            out
        };
        let y = rk4_vec(&rhs, 0.0, tau, &[0.0; 5], 20_000);
        GaussianTheta { a: [[y[0], y[1]], [y[2], y[3]]], c: y[4] }
    }

    pub fn at(&self, x: f64, v: f64) -> f64 {
        let a = self.a;
        (-(a[0][0] * x * x + (a[0][1] + a[1][0]) * x * v + a[1][1] * v * v) - self.c).exp()
    }
}

/// Backward solution `P(0)` of the scalar Riccati equation
/// `P' = −q − 2aP + 2P²/R`, `P(T) = m`.
pub fn scalar_riccati(a: f64, q: f64, m: f64, r: f64, t_end: f64) -> f64 {
    let y = rk4_vec(&|_, p| vec![q + 2.0 * a * p[0] - 2.0 * p[0] * p[0] / r], 0.0, t_end, &[m], 20_000);
    y[0]
}
