//! Reference numerics used by the verification battery.

/// Root of `f` in `[lo, hi]` by bisection; `f(lo)` and `f(hi)` must differ in
/// sign.
pub fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Grows `[−w, w]` until `f` changes sign, then bisects.
pub fn find_root(f: &dyn Fn(f64) -> f64) -> Option<f64> {
    let mut w = 1.0;
    for _ in 0..200 {
        if f(-w).signum() != f(w).signum() {
            return bisect(f, -w, w);
        }
        w *= 2.0;
    }
    None
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let (f1, f2) = (f(c - h * XGK[j]), f(c + h * XGK[j]));
        k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7, 15) quadrature on `[a, b]` to relative
/// tolerance `rel` (absolute floor `abs`).
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64, abs: f64) -> f64 {
    let mut panels = vec![(a, b, gk15(f, a, b))];
    for _ in 0..2000 {
        let total: f64 = panels.iter().map(|p| p.2 .0).sum();
        let err: f64 = panels.iter().map(|p| p.2 .1).sum();
        if err <= (rel * total.abs()).max(abs) {
            return total;
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .expect("nonempty");
        let (lo, hi, _) = panels.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        panels.push((lo, mid, gk15(f, lo, mid)));
        panels.push((mid, hi, gk15(f, mid, hi)));
    }
    panels.iter().map(|p| p.2 .0).sum()
}

/// Nested adaptive quadrature over a rectangle.
pub fn adaptive_2d(f: &dyn Fn(f64, f64) -> f64, x: (f64, f64), y: (f64, f64), rel: f64) -> f64 {
    let inner = |a: f64| adaptive(&|b| f(a, b), y.0, y.1, rel * 0.1, 1e-300);
    adaptive(&inner, x.0, x.1, rel, 1e-300)
}

/// Classical RK4 for a scalar ODE `y' = g(t, y)` from `t0` to `t1`.
pub fn rk4(g: &dyn Fn(f64, f64) -> f64, t0: f64, t1: f64, y0: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = g(t, y);
        let k2 = g(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = g(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = g(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_on_known_answers() {
        let r = find_root(&|u| 3.0 * u - 7.5).unwrap();
        assert!((r - 2.5).abs() < 1e-14);
        let q = adaptive(&|x| (-x * x).exp(), -8.0, 8.0, 1e-12, 0.0);
        assert!((q - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let q2 = adaptive_2d(&|x, y| (-(x * x + 2.0 * y * y)).exp(), (-8.0, 8.0), (-6.0, 6.0), 1e-10);
        assert!((q2 - std::f64::consts::PI / 2f64.sqrt()).abs() < 1e-9);
        let y = rk4(&|_, y| -y, 0.0, 1.0, 1.0, 1000);
        assert!((y - (-1.0f64).exp()).abs() < 1e-13);
    }
}
