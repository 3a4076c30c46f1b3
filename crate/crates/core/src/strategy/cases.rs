use serde::Serialize;

use crate::error::Result;
use crate::lqg::exp_checked;
use crate::model::PerFish;
use crate::scalar::{sqrt_eight_thirds, Real};
use crate::strategy::{closed_form_strategy, Example1Context, StrategyMode};

/// Survival `H` driven towards 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseI<T> {
    pub survival: Vec<T>,
    pub u_star: Vec<T>,
    /// `max |H·u*(H)/u*(1) − 1|`; absent when `u*(1) = 0`.
    pub scaling_error: Option<T>,
    /// `|u*|` strictly increasing along the path.
    pub increasing: bool,
}

/// All neighbour positions contracted onto the fish: `x^j ← x^i + t(x^j − x^i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseII<T> {
    pub scale: Vec<T>,
    pub u_star: Vec<T>,
    pub foc_limit: T,
    pub verbatim_limit: T,
    /// `e^{ρs + sλ₁v + λ₃√(8/3)k} / (2αHxv) · (λλ₂/I)·v(v^r − v)`.
    pub printed_limit: T,
    /// `|verbatim/printed − 1|`; absent when the printed limit is 0.
    pub verbatim_error: Option<T>,
    /// `foc/printed`, which equals `ψ`.
    pub foc_over_printed: Option<T>,
}

/// All neighbour velocities contracted onto the fish's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseIII<T> {
    pub scale: Vec<T>,
    pub u_star: Vec<T>,
    pub computed_limit: T,
    /// `e^{ρs + sλ₁v + λ₃√(8/3)k} / (2αHxv)`, the limit claimed in the text.
    pub printed_claim: T,
    /// The computed and claimed limits differ.
    pub discrepancy: bool,
}

/// Field value raised in unit steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseIV<T> {
    pub k: Vec<T>,
    pub u_star: Vec<T>,
    /// `e^{λ₃√(8/3)}`.
    pub expected_factor: T,
    /// `max |u*(k+1)/u*(k) / factor − 1|`; absent when `u* = 0`.
    pub factor_error: Option<T>,
    pub increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseDiagnostics<T> {
    pub fish: usize,
    pub time: T,
    pub mode: StrategyMode,
    pub case_i: CaseI<T>,
    pub case_ii: CaseII<T>,
    pub case_iii: CaseIII<T>,
    pub case_iv: CaseIV<T>,
}

fn rel<T: Real>(a: T, b: T) -> Option<T> {
    (b != T::zero()).then(|| (a / b - T::one()).abs())
}

fn strictly_increasing<T: Real>(u: &[T]) -> bool {
    u.windows(2).all(|w| w[1].abs() > w[0].abs())
}

/// Evaluates the closed-form strategy of `fish` along the four parameter
/// paths and compares the limits with the closed-form claims.
pub fn case_diagnostics<T: Real>(ctx: &Example1Context<T>, s: T, fish: usize) -> Result<CaseDiagnostics<T>> {
    ctx.validate()?;
    let p = &ctx.params;
    let n = p.n_fish;
    let (x, v) = (ctx.school.positions[fish], ctx.school.velocities[fish]);
    let with = |f: &dyn Fn(&mut Example1Context<T>)| -> Result<T> {
        let mut c = ctx.clone();
        f(&mut c);
        closed_form_strategy(&c, s, fish)
    };

    let survival: Vec<T> = [1.0, 0.1, 0.01, 0.001].iter().map(|&h| T::lit(h)).collect();
    let mut u1 = Vec::new();
    for &h in &survival {
        u1.push(with(&|c| {
            let mut each: Vec<T> = (0..n).map(|i| c.params.survival(i)).collect();
            each[fish] = h;
            c.params.survival = PerFish::Each(each);
        })?);
    }
    let scaling_error = survival
        .iter()
        .zip(&u1)
        .map(|(&h, &u)| rel(h * u, u1[0]))
        .try_fold(T::zero(), |m, e| e.map(|e| m.max(e)));
    let case_i = CaseI { increasing: strictly_increasing(&u1), survival, u_star: u1, scaling_error };

    let scale: Vec<T> = [1.0, 0.1, 0.01, 0.001, 0.0].iter().map(|&t| T::lit(t)).collect();
    let contract = |c: &mut Example1Context<T>, t: T, positions: bool| {
        let (own, vals) = if positions { (x, &mut c.school.positions) } else { (v, &mut c.school.velocities) };
        for (j, y) in vals.iter_mut().enumerate() {
            if j != fish {
                *y = own + t * (*y - own);
            }
        }
    };
    let mut u2 = Vec::new();
    for &t in &scale {
        u2.push(with(&|c| contract(c, t, true))?);
    }
    let lim_mode = |mode| with(&|c| {
        contract(c, T::zero(), true);
        c.mode = mode;
    });
    let foc_limit = lim_mode(StrategyMode::FocConsistent)?;
    let verbatim_limit = lim_mode(StrategyMode::PaperVerbatim)?;
    let denominator = T::two() * p.weight(fish) * p.survival(fish) * x * v;
    let base = exp_checked(p.discount(fish) * s + s * p.mult1 * v + p.mult3 * sqrt_eight_thirds::<T>() * ctx.k)? / denominator;
    let v_ref = ctx.school.velocities[ctx.references[fish]];
    let printed_limit = base * p.coupling * p.mult2 / T::count(n) * v * (v_ref - v);
    let case_ii = CaseII {
        scale: scale.clone(),
        u_star: u2,
        foc_limit,
        verbatim_limit,
        printed_limit,
        verbatim_error: rel(verbatim_limit, printed_limit),
        foc_over_printed: (printed_limit != T::zero()).then(|| foc_limit / printed_limit),
    };

    let mut u3 = Vec::new();
    for &t in &scale {
        u3.push(with(&|c| contract(c, t, false))?);
    }
    let computed_limit = *u3.last().expect("nonempty path");
    let tol = T::lit(1e-12) * (computed_limit.abs() + base.abs());
    let case_iii = CaseIII { scale, u_star: u3, computed_limit, printed_claim: base, discrepancy: (computed_limit - base).abs() > tol };

    let k: Vec<T> = (0..4).map(|d| ctx.k + T::count(d)).collect();
    let mut u4 = Vec::new();
    for &kk in &k {
        u4.push(with(&|c| c.k = kk)?);
    }
    let expected_factor = (p.mult3 * sqrt_eight_thirds::<T>()).exp();
    let factor_error = u4.windows(2).map(|w| rel(w[1] / expected_factor, w[0])).try_fold(T::zero(), |m, e| e.map(|e| m.max(e)));
    let case_iv = CaseIV { increasing: strictly_increasing(&u4), k, u_star: u4, expected_factor, factor_error };

    Ok(CaseDiagnostics { fish, time: s, mode: ctx.mode, case_i, case_ii, case_iii, case_iv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, SchoolState};

    fn ctx(mode: StrategyMode, psi: f64) -> Example1Context<f64> {
        let mut p = ModelParams::new(3);
        p.mult1 = 0.3;
        p.mult2 = 0.4;
        p.mult3 = 0.5;
        p.comm_rate = psi;
        p.coupling = 1.2;
        let school = SchoolState::new(0.0, vec![1.0, 1.4, 2.5], vec![0.8, 1.1, 0.5]);
        let mut c = Example1Context::new(p, school, 0.2).unwrap();
        c.mode = mode;
        c
    }

    #[test]
    fn case_paths() {
        for mode in [StrategyMode::FocConsistent, StrategyMode::PaperVerbatim] {
            let d = case_diagnostics(&ctx(mode, 0.7), 0.6, 0).unwrap();
            assert!(d.case_i.scaling_error.unwrap() < 1e-10);
            assert!(d.case_i.increasing);
            assert!(d.case_ii.verbatim_error.unwrap() < 1e-12);
            assert!((d.case_ii.foc_over_printed.unwrap() - 0.7).abs() < 1e-12);
            assert_eq!(d.case_iii.computed_limit, 0.0);
            assert!(d.case_iii.discrepancy);
            assert!(d.case_iv.factor_error.unwrap() < 1e-10);
            assert!(d.case_iv.increasing);
        }
    }
}
