mod common;

use std::sync::Arc;

use deltavar::expr::{BinOp, Expr, Func, Var};
use deltavar::oracle::finite_diff_check;
use deltavar::timescale::integration_by_parts_residuals;
use deltavar::variational::{certify_basic, solve_basic};
use deltavar::{Arity, EvalPoint, GridFunction, LagrangianExpr, TimeScale};
use proptest::prelude::*;

const ARITY: Arity = Arity { n: 2, r: 2, m: 1 };

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u32..1000, 0u32..4).prop_map(|(k, d)| Expr::Num(f64::from(k) / f64::from(1 << d))),
        (0.0f64..1e6).prop_map(Expr::Num),
        Just(Expr::Var(Var::Time)),
        Just(Expr::Var(Var::Mu)),
        (0usize..2).prop_map(|i| Expr::Var(Var::Y(i))),
        (0usize..2, 1usize..=2).prop_map(|(comp, order)| Expr::Var(Var::Dy { comp, order })),
        Just(Expr::Var(Var::U(0))),
    ]
}

fn any_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(5, 48, 2, |inner| {
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow)
        ];
        let func = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Log),
            Just(Func::Sqrt)
        ];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, l, r)| Expr::Binary(o, Box::new(l), Box::new(r))),
            (func, inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
        ]
    })
}

/// Smooth expressions with bounded derivatives near the unit box.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-2.0f64..2.0).prop_map(Expr::num),
        Just(Expr::Var(Var::Time)),
        (0usize..2).prop_map(|i| Expr::Var(Var::Y(i))),
        (0usize..2, 1usize..=2).prop_map(|(comp, order)| Expr::Var(Var::Dy { comp, order })),
        Just(Expr::Var(Var::U(0))),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)];
        let func = prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp)];
        prop_oneof![
            (op, inner.clone(), inner.clone()).prop_map(|(o, l, r)| Expr::Binary(o, Box::new(l), Box::new(r))),
            (func, inner.clone()).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
            inner.prop_map(|e| Expr::Binary(BinOp::Pow, Box::new(e), Box::new(Expr::Num(2.0)))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn printing_then_parsing_is_the_identity(e in any_expr()) {
        let printed = e.to_string();
        let parsed = LagrangianExpr::parse(&printed, ARITY).unwrap();
        prop_assert_eq!(parsed.ast(), &e, "printed as {}", printed);
    }

    #[test]
    fn exact_partials_match_central_differences(
        e in smooth_expr(),
        vars in prop::collection::vec(-1.0f64..1.0, 7),
        t in -1.0f64..1.0,
        mu in 0.0f64..2.0,
    ) {
        let l = LagrangianExpr::from_ast(e, ARITY).unwrap();
        let point = EvalPoint { t, mu, vars: &vars };
        let worst = finite_diff_check(&l, &point, 1e-6).unwrap();
        prop_assert!(worst <= 1e-6, "{} at {:?}: {}", l, vars, worst);
    }
}

fn scale_from(start: f64, gaps: &[f64]) -> Arc<TimeScale> {
    let mut pts = vec![start];
    for g in gaps {
        pts.push(pts.last().unwrap() + g);
    }
    Arc::new(TimeScale::new(pts).unwrap())
}

proptest! {
    #[test]
    fn sigma_identity_and_product_rule(
        start in -5.0f64..5.0,
        gaps in prop::collection::vec(0.1f64..2.0, 2..40),
        seed in prop::collection::vec(-1.0f64..1.0, 80),
    ) {
        let scale = scale_from(start, &gaps);
        let len = scale.len();
        let f = GridFunction::scalar(scale.clone(), seed[..len].to_vec()).unwrap();
        let g = GridFunction::scalar(scale.clone(), seed[40..40 + len].to_vec()).unwrap();
        let fd = f.delta_derivative(1).unwrap();
        let gd = g.delta_derivative(1).unwrap();
        let fs = f.sigma().unwrap();
        let gs = g.sigma().unwrap();
        let fgd = f.zip_with(&g, |a, b| a * b).unwrap().delta_derivative(1).unwrap();
        for i in 0..len - 1 {
            let mu = scale.mu(i);
            let mag = 1.0 + (f.values()[i + 1].abs() + f.values()[i].abs()) * (1.0 + 1.0 / mu)
                * (1.0 + g.values()[i + 1].abs() + g.values()[i].abs());
            prop_assert!((fs.values()[i] - (f.values()[i] + mu * fd.values()[i])).abs() <= 1e-12 * mag);
            let rule1 = fd.values()[i] * g.values()[i] + fs.values()[i] * gd.values()[i];
            let rule2 = f.values()[i] * gd.values()[i] + fd.values()[i] * gs.values()[i];
            prop_assert!((fgd.values()[i] - rule1).abs() <= 1e-12 * mag);
            prop_assert!((fgd.values()[i] - rule2).abs() <= 1e-12 * mag);
        }
        let (r1, r2) = integration_by_parts_residuals(&f, &g).unwrap();
        let bound = 1e-12 * (len as f64) * 16.0;
        prop_assert!(r1 <= bound && r2 <= bound, "{} {}", r1, r2);
    }

    #[test]
    fn delta_integral_is_additive(
        gaps in prop::collection::vec(0.1f64..2.0, 2..30),
        values in prop::collection::vec(-1.0f64..1.0, 31),
        cut in 0usize..31,
    ) {
        let scale = scale_from(0.0, &gaps);
        let len = scale.len();
        let f = GridFunction::scalar(scale.clone(), values[..len].to_vec()).unwrap();
        let mid = cut % len;
        let whole = f.delta_integral_idx(0, len - 1).unwrap()[0];
        let parts = f.delta_integral_idx(0, mid).unwrap()[0] + f.delta_integral_idx(mid, len - 1).unwrap()[0];
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + 2.0 * len as f64));
        prop_assert!(f.delta_integral_idx(mid, mid).unwrap()[0] == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_certify_and_uncertify_under_perturbation(seed in 0u64..u64::MAX, bump in 0.05f64..1.0) {
        let mut rng = common::rng(seed);
        let p = common::random_basic(&mut rng);
        let (y, report) = solve_basic(&p).unwrap();
        prop_assert!(report.pass);
        // Moving one interior value breaks the integral form, which is
        // strict for a strictly convex transcription.
        if p.scale().len() > 2 {
            let mut v = y.values().to_vec();
            v[p.n()] += bump;
            let z = GridFunction::new(p.scale().clone(), p.n(), v).unwrap();
            prop_assert!(!certify_basic(&p, &z, 1e-8).unwrap().pass);
        }
    }
}
