use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use visa_core::expr::{
    canonicalize, differentiate, free_constants, parse, print, simplify, with_constants, Expr, FunctionKind,
    NamedConstant, Variable,
};
use visa_core::numeric::{eval, EvalPoint};

const UNARY: [FunctionKind; 14] = [
    FunctionKind::Sin,
    FunctionKind::Cos,
    FunctionKind::Tan,
    FunctionKind::Asin,
    FunctionKind::Acos,
    FunctionKind::Atan,
    FunctionKind::Exp,
    FunctionKind::Log,
    FunctionKind::Sqrt,
    FunctionKind::Sinh,
    FunctionKind::Cosh,
    FunctionKind::Tanh,
    FunctionKind::Abs,
    FunctionKind::AiryAi,
];

fn config(cases: u32, seed: u64) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn any_number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-20i32..20).prop_map(f64::from),
        -1e3..1e3f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        prop::sample::select(vec![1e-7, 2.5e20, 0.1, 1e15, -1e-5, 0.30000000000000004]),
    ]
}

fn tree(leaf: BoxedStrategy<Expr>, depth: u32) -> BoxedStrategy<Expr> {
    leaf.prop_recursive(depth, 96, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::add),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::mul),
            inner.clone().prop_map(Expr::neg),
            (inner.clone(), inner.clone()).prop_map(|(b, e)| Expr::pow(b, e)),
            (prop::sample::select(UNARY.to_vec()), inner.clone()).prop_map(|(f, a)| Expr::call1(f, a)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::call(FunctionKind::Atan2, vec![a, b])),
            (0u32..4, any::<bool>(), inner).prop_map(|(n, j, z)| {
                let f = if j { FunctionKind::BesselJ } else { FunctionKind::BesselY };
                Expr::call(f, vec![Expr::num(n as f64), z])
            }),
        ]
    })
    .boxed()
}

fn wide_leaf() -> BoxedStrategy<Expr> {
    prop_oneof![
        any_number().prop_map(Expr::num),
        Just(Expr::x()),
        Just(Expr::y()),
        Just(Expr::Const(NamedConstant::Pi)),
        Just(Expr::Const(NamedConstant::E)),
    ]
    .boxed()
}

fn gentle_leaf() -> BoxedStrategy<Expr> {
    prop_oneof![
        prop::sample::select(vec![-2.0, -0.5, 0.3, 0.75, 1.5, 2.0, 3.0]).prop_map(Expr::num),
        Just(Expr::x()),
        Just(Expr::y()),
        Just(Expr::Const(NamedConstant::Pi)),
    ]
    .boxed()
}

fn points() -> Vec<EvalPoint> {
    (0..20)
        .map(|i| {
            let t = i as f64;
            EvalPoint::new(-1.7 + 0.173 * t, 1.3 - 0.121 * t + 0.01 * (t * 1.7).sin())
        })
        .collect()
}

proptest! {
    #![proptest_config(config(10_000, 0x5eed_0001))]

    #[test]
    fn print_parse_round_trip(e in tree(wide_leaf(), 8)) {
        let text = print(&e);
        let back = parse(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(&back, &e, "printed as {}", text);
        prop_assert_eq!(print(&back), text);
    }
}

proptest! {
    #![proptest_config(config(2_000, 0x5eed_0002))]

    #[test]
    fn derivative_matches_central_difference(e in tree(gentle_leaf(), 4), wrt_x in any::<bool>()) {
        let v = if wrt_x { Variable::X } else { Variable::Y };
        let de = differentiate(&e, v);
        let h = 1e-5;
        for p in points() {
            let shift = |s: f64| if wrt_x { EvalPoint::new(p.x + s, p.y) } else { EvalPoint::new(p.x, p.y + s) };
            // keep clear of kernel domain boundaries
            let guard: Result<Vec<f64>, _> =
                [-1e-3, -2.0 * h, -h, 0.0, h, 2.0 * h, 1e-3].iter().map(|&s| eval(&e, shift(s))).collect();
            let Ok(vals) = guard else { continue };
            if vals.iter().any(|v| v.abs() > 1e4) {
                continue;
            }
            let Ok(exact) = eval(&de, p) else {
                return Err(TestCaseError::fail(format!("derivative of {} fails at {p:?}: {}", print(&e), print(&de))));
            };
            let fd = (vals[4] - vals[2]) / (2.0 * h);
            let fd_wide = (vals[5] - vals[1]) / (4.0 * h);
            // the difference quotient itself has not converged (kinks, fast oscillation)
            if (fd - fd_wide).abs() > 1e-6 * (1.0 + fd.abs()) {
                continue;
            }
            let tol = (1e-5f64).max(1e-4 * exact.abs());
            prop_assert!((fd - exact).abs() <= tol, "{} d/{:?} at {:?}: fd {} vs {} ({})", print(&e), v, p, fd, exact, print(&de));
        }
    }

    #[test]
    fn simplify_preserves_value(e in tree(gentle_leaf(), 5)) {
        let s = simplify(&e);
        for p in points() {
            let Ok(a) = eval(&e, p) else { continue };
            if a.abs() > 1e8 {
                continue;
            }
            let b = eval(&s, p).map_err(|err| TestCaseError::fail(format!("{} -> {}: {err}", print(&e), print(&s))))?;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} -> {} at {:?}: {} vs {}", print(&e), print(&s), p, a, b);
        }
    }

    #[test]
    fn simplify_is_idempotent(e in tree(gentle_leaf(), 6)) {
        let once = simplify(&e);
        prop_assert_eq!(simplify(&once), once);
    }

    #[test]
    fn canonical_form_ignores_constant_values(
        e in tree(gentle_leaf(), 5),
        seed_a in prop::collection::vec(0.1..2.0f64, 64),
        seed_b in prop::collection::vec(0.1..2.0f64, 64),
        signs_a in prop::collection::vec(any::<bool>(), 64),
        signs_b in prop::collection::vec(any::<bool>(), 64),
    ) {
        let n = free_constants(&e).len();
        prop_assume!(n <= 64);
        // generic magnitudes away from 0 and 1 so no identity rule can fire
        let generic = |seed: &[f64], signs: &[bool]| -> Vec<f64> {
            seed.iter().zip(signs).take(n).map(|(m, s)| {
                let v = 1.1 + m + m * m * 0.123_456_789;
                if *s { v } else { -v }
            }).collect()
        };
        let a = with_constants(&e, &generic(&seed_a, &signs_a));
        let b = with_constants(&e, &generic(&seed_b, &signs_b));
        let ca = canonicalize(&a);
        let cb = canonicalize(&b);
        prop_assert_eq!(&ca, &cb, "{} vs {}", print(&a), print(&b));
        prop_assert_eq!(canonicalize(&ca), ca);
    }
}
