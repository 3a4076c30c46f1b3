mod common;

use fishgame_core::feynman::{gaussian_mass, shifted_gaussian_integral, transition_step, GaussianMode, KernelBlock, Localization};
use fishgame_core::hjb::{cole_hopf_forward, cole_hopf_inverse, Axis, GridTag, ValueGrid};
use fishgame_core::io::fmt_float;
use fishgame_core::lqg::{q_constant, sample_default_field};
use fishgame_core::model::{
    compare_policies, discounted_running_weight, estimate_objective, ConstantPolicy, ModelParams, PerFish, RewardSpec,
    SchoolState, Verdict,
};
use fishgame_core::sde::{simulate, DynamicsSpec, VelocityConvention};
use fishgame_core::strategy::{closed_form_strategy, foc_residual, strategy_terms, Example1Context, StrategyMode};
use fishgame_core::{sqrt_eight_thirds, Error};
use proptest::prelude::*;

use common::{bisect_root, scalar_riccati, simpson, GaussianTheta};

fn pd_block() -> impl Strategy<Value = KernelBlock<f64>> {
    (0.2f64..3.0, 1.0f64..50.0, 0.0f64..std::f64::consts::PI, -2.0f64..2.0, -2.0f64..2.0, 0.05f64..20.0).prop_map(
        |(e1, cond, th, v1, v2, eps)| {
            let e2 = e1 * cond;
            let (c, s) = (th.cos(), th.sin());
            let h12 = c * s * (e1 - e2);
            KernelBlock::new([[c * c * e1 + s * s * e2, h12], [h12, s * s * e1 + c * c * e2]], [v1, v2], eps)
        },
    )
}

#[derive(Debug, Clone)]
struct School {
    params: ModelParams<f64>,
    xs: Vec<f64>,
    vs: Vec<f64>,
    k: f64,
    s: f64,
}

fn school() -> impl Strategy<Value = School> {
    (2usize..7)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.2f64..3.0, n),
                prop::collection::vec(0.2f64..3.0, n),
                (0.05f64..0.9, 0.2f64..2.0, 0.1f64..1.0),
                (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.1f64..2.0, 0.1f64..2.0),
                (-1.0f64..1.0, 0.0f64..2.0),
            )
        })
        .prop_map(|(xs, vs, (rho, alpha, h), (l1, l2, l3, psi, lambda), (k, s))| {
            let mut p = ModelParams::new(xs.len());
            p.discount = PerFish::Shared(rho);
            p.weight = PerFish::Shared(alpha);
            p.survival = PerFish::Shared(h);
            p.mult1 = l1;
            p.mult2 = l2;
            p.mult3 = l3;
            p.comm_rate = psi;
            p.coupling = lambda;
            School { params: p, xs, vs, k, s }
        })
}

fn context(sc: &School, mode: StrategyMode) -> Example1Context<f64> {
    let mut c = Example1Context::new(sc.params.clone(), SchoolState::new(0.0, sc.xs.clone(), sc.vs.clone()), sc.k).unwrap();
    c.mode = mode;
    c
}

fn modes() -> impl Strategy<Value = StrategyMode> {
    prop_oneof![Just(StrategyMode::FocConsistent), Just(StrategyMode::PaperVerbatim)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paper_over_exact_mass_is_sqrt_eps(b in pd_block()) {
        let ratio = gaussian_mass(&b, GaussianMode::Paper).unwrap() / gaussian_mass(&b, GaussianMode::Exact).unwrap();
        prop_assert!((ratio / b.epsilon.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unshifted_integral_is_the_mass(mut b in pd_block()) {
        b.shift = [0.0, 0.0];
        let m = gaussian_mass(&b, GaussianMode::Exact).unwrap();
        prop_assert_eq!(shifted_gaussian_integral(&b, GaussianMode::Exact).unwrap(), m);
    }

    #[test]
    fn shift_only_raises_the_integral(b in pd_block()) {
        // Vᵀ H⁻¹ V ≥ 0 for positive definite H.
        let m = gaussian_mass(&b, GaussianMode::Exact).unwrap();
        prop_assert!(shifted_gaussian_integral(&b, GaussianMode::Exact).unwrap() >= m * (1.0 - 1e-15));
    }

    #[test]
    fn transition_keeps_psi_nonnegative(
        values in prop::collection::vec(0.0f64..5.0, 49),
        c in -1.0f64..1.0,
        a in 0.0f64..2.0,
        b in pd_block(),
        eps in 0.5f64..50.0,
    ) {
        let ax = Axis::<f64>::new(-1.0, 1.0, 7).unwrap();
        let psi = ValueGrid::from_fn(ax, ax, 0.0, GridTag::Psi, |x: f64, v: f64| {
            let i = ((x + 1.0) / ax.spacing()).round() as usize;
            let j = ((v + 1.0) / ax.spacing()).round() as usize;
            values[i * 7 + j]
        }).unwrap();
        let block = KernelBlock::new(b.hessian, [0.0, 0.0], eps);
        let f = move |x: f64, v: f64| c + a * (x * x - v);
        for mode in [GaussianMode::Exact, GaussianMode::Paper] {
            let out = transition_step(&psi, &f, &block, Localization::default(), mode, 6).unwrap();
            prop_assert!(out.values.iter().all(|&p| p >= 0.0 && p.is_finite()));
        }
    }

    #[test]
    fn foc_residual_vanishes_at_closed_form(sc in school()) {
        let ctx = context(&sc, StrategyMode::FocConsistent);
        for fish in 0..sc.xs.len() {
            let u = closed_form_strategy(&ctx, sc.s, fish).unwrap();
            let (x, v) = (sc.xs[fish], sc.vs[fish]);
            let res = foc_residual(&ctx, fish, sc.s, x, v, u).unwrap();
            // The residual is affine in u; scale by its two terms.
            let scale = foc_residual(&ctx, fish, sc.s, x, v, 0.0).unwrap().abs() + (res - foc_residual(&ctx, fish, sc.s, x, v, 0.0).unwrap()).abs();
            prop_assert!(res.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE), "res {} scale {}", res, scale);
        }
    }

    #[test]
    fn field_shift_scales_strategy(sc in school(), dk in -2.0f64..2.0, mode in modes()) {
        let ctx = context(&sc, mode);
        let mut shifted = ctx.clone();
        shifted.k = ctx.k + dk;
        let factor = (sc.params.mult3 * sqrt_eight_thirds::<f64>() * dk).exp();
        for fish in 0..sc.xs.len() {
            let u0 = closed_form_strategy(&ctx, sc.s, fish).unwrap();
            let u1 = closed_form_strategy(&shifted, sc.s, fish).unwrap();
            prop_assert!((u1 - factor * u0).abs() <= 1e-12 * (u1.abs() + (factor * u0).abs()), "{} vs {}", u1, factor * u0);
        }
    }

    #[test]
    fn antisymmetric_in_velocity_differences(sc in school(), x in 0.3f64..2.0, mode in modes()) {
        // Coincident positions make the alignment term vanish.
        let n = sc.xs.len();
        let xs = vec![x; n];
        let ctx = Example1Context::new(sc.params.clone(), SchoolState::new(0.0, xs.clone(), sc.vs.clone()), sc.k).unwrap();
        let mut ctx = ctx;
        ctx.mode = mode;
        let own = sc.vs[0];
        let flipped: Vec<f64> = sc.vs.iter().enumerate().map(|(j, &v)| if j == 0 { v } else { 2.0 * own - v }).collect();
        let mut other = ctx.clone();
        other.school = SchoolState::new(0.0, xs, flipped);
        let u = closed_form_strategy(&ctx, sc.s, 0).unwrap();
        let w = closed_form_strategy(&other, sc.s, 0).unwrap();
        prop_assert!((u + w).abs() <= 1e-12 * (u.abs() + w.abs()).max(1e-300), "{} vs {}", u, w);
    }

    #[test]
    fn survival_scales_strategy_inversely(sc in school(), h in 0.01f64..1.0, mode in modes()) {
        let ctx = context(&sc, mode);
        let mut low = ctx.clone();
        let n = sc.xs.len();
        let mut each: Vec<f64> = (0..n).map(|i| ctx.params.survival(i)).collect();
        let h0 = each[0];
        each[0] = h;
        low.params.survival = PerFish::Each(each);
        let u0 = closed_form_strategy(&ctx, sc.s, 0).unwrap();
        let u1 = closed_form_strategy(&low, sc.s, 0).unwrap();
        prop_assert!((u1 * h - u0 * h0).abs() <= 1e-12 * (u1 * h).abs().max((u0 * h0).abs()).max(1e-300));
    }

    #[test]
    fn guard_refuses_small_denominators(sc in school(), tiny in 0.0f64..1e-13, mode in modes()) {
        let mut ctx = context(&sc, mode);
        ctx.school.positions[0] = tiny;
        match strategy_terms(&ctx, sc.s, 0) {
            Err(Error::Numerical(msg)) => prop_assert!(msg.contains("strategy singular")),
            other => prop_assert!(false, "expected a numerical error, got {:?}", other),
        }
    }

    #[test]
    fn cole_hopf_round_trip(vals in prop::collection::vec(0.05f64..20.0, 25), omega in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0]) {
        let ax = Axis::<f64>::new(0.0, 1.0, 5).unwrap();
        let theta = ValueGrid::from_fn(ax, ax, 0.0, GridTag::Theta, |x: f64, v: f64| vals[(x * 4.0).round() as usize * 5 + (v * 4.0).round() as usize]).unwrap();
        let back = cole_hopf_inverse(&cole_hopf_forward(&theta, omega, 1e-12).unwrap(), omega, 1e-12).unwrap();
        for (a, b) in theta.values.iter().zip(back.values.iter()) {
            prop_assert!((a - b).abs() <= 1e-13 * a);
        }
    }

    #[test]
    fn discounted_weight_decreases(rho in 0.01f64..0.99, alpha in 0.1f64..5.0, h in 0.01f64..1.0, s in 0.0f64..10.0, ds in 1e-3f64..5.0) {
        let mut p = ModelParams::new(1);
        p.discount = PerFish::Shared(rho);
        p.weight = PerFish::Shared(alpha);
        p.survival = PerFish::Shared(h);
        prop_assert!(discounted_running_weight(&p, 0, s + ds) < discounted_running_weight(&p, 0, s));
    }

    #[test]
    fn q_constant_at_least_two(gamma in 0.01f64..10.0) {
        // 2/γ + γ/2 ≥ 2 with equality only at γ = 2.
        let q: f64 = q_constant(gamma).unwrap();
        prop_assert!(q >= 2.0 - 1e-15);
    }

    #[test]
    fn mirrored_field_negates(seed in any::<u64>(), l in -10.0f64..10.0) {
        let f = sample_default_field::<f64>(16, seed).unwrap();
        prop_assert_eq!(f.mirrored().eval(l), -f.eval(l));
        prop_assert!(f.metric_weight(l).unwrap() > 0.0);
    }

    #[test]
    fn float_text_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn objective_is_linear_in_weight(c in 0.1f64..4.0, seed in any::<u64>()) {
        let mut p = ModelParams::new(3);
        p.sigma1 = 0.3;
        p.sigma2 = 0.2;
        p.horizon = 0.5;
        let init = SchoolState::new(0.0, vec![0.5, 1.0, 1.5], vec![1.0, 0.9, 1.2]);
        let spec = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        let base = estimate_objective(&spec, &p, &RewardSpec::Example1, &ConstantPolicy(0.4), &init, 20, seed).unwrap();
        p.weight = PerFish::Shared(c);
        let scaled = estimate_objective(&spec, &p, &RewardSpec::Example1, &ConstantPolicy(0.4), &init, 20, seed).unwrap();
        prop_assert!((scaled.mean - c * base.mean).abs() <= 1e-12 * (c * base.mean).abs().max(1e-300));
    }

    #[test]
    fn identical_policies_tie(seed in any::<u64>(), u in -1.0f64..1.0) {
        let mut p = ModelParams::new(2);
        p.sigma1 = 0.2;
        p.sigma2 = 0.2;
        p.horizon = 0.3;
        let init = SchoolState::new(0.0, vec![0.5, 1.0], vec![1.0, 0.8]);
        let spec = DynamicsSpec::cucker_smale(VelocityConvention::Alignment);
        let r = compare_policies(&spec, &p, &RewardSpec::Example1, &ConstantPolicy(u), &ConstantPolicy(u), &init, 10, seed).unwrap();
        prop_assert_eq!(r.gap, 0.0);
        prop_assert_eq!(r.verdict, Verdict::Indistinguishable);
    }

    #[test]
    fn simulation_depends_only_on_seed(seed in any::<u64>()) {
        let mut p = ModelParams::new(3);
        p.sigma1 = 0.5;
        p.sigma2 = 0.5;
        p.horizon = 0.2;
        let init = SchoolState::new(0.0, vec![0.0, 1.0, 2.0], vec![1.0, 1.1, 0.9]);
        let spec = DynamicsSpec::cucker_smale(VelocityConvention::Paper);
        let a = simulate(&spec, &p, &ConstantPolicy(0.2), &init, 0.2, 0.01, 6, seed).unwrap();
        let b = simulate(&spec, &p, &ConstantPolicy(0.2), &init, 0.2, 0.01, 6, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn oracles_reproduce_known_values() {
    let r = bisect_root(|u| 2.0 * u - 3.0).unwrap();
    assert!((r - 1.5).abs() < 1e-15);
    let q = simpson(&|x| (-x * x).exp(), -9.0, 9.0, 1e-13);
    assert!((q - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    // Constant W only: Θ = exp(−q₀τ/ω).
    let g = GaussianTheta::solve(0.3, [[0.0; 2]; 2], [[-0.5, 0.0], [0.0, -0.5]], [[0.25, 0.0], [0.0, 0.25]], 0.5, 1.0);
    assert!((g.at(0.4, -0.2) - (-0.6f64).exp()).abs() < 1e-12);
    // P' = −q + 2P² with P(T) = 0 and a = 0, R = 1: P(0) = ½ tanh(T) for q = ½.
    let p = scalar_riccati(0.0, 0.5, 0.0, 1.0, 1.0);
    assert!((p - 0.5 * 1.0f64.tanh()).abs() < 1e-12);
}
