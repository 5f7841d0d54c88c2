use ccpp::expr::{detect_affine, grad_fd, parse, Expr, Params, Tape};
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-50.0f64..50.0).prop_map(|c| Expr::Const((c * 100.0).round() / 100.0)),
        (0usize..3).prop_map(Expr::Var),
        (0usize..2).prop_map(Expr::Sample),
        prop_oneof![Just("a"), Just("theta")].prop_map(|s| Expr::Param(s.to_string())),
    ]
}

fn tree() -> impl Strategy<Value = Expr> {
    // Depth 6 counting the leaf level.
    leaf().prop_recursive(5, 64, 4, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Mul(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Div(b(x), b(y))),
            inner.clone().prop_map(move |x| Expr::Neg(b(x))),
            (inner.clone(), -3i32..5).prop_map(move |(x, k)| Expr::Pow(b(x), k)),
            inner.clone().prop_map(move |x| Expr::Exp(b(x))),
            inner.clone().prop_map(move |x| Expr::Ln(b(x))),
            inner.clone().prop_map(move |x| Expr::Abs(b(x))),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Max),
            prop::collection::vec(inner, 2..4).prop_map(Expr::SumSq),
        ]
    })
}

/// Expressions affine in x by construction, possibly with annihilated
/// nonlinear parts.
fn affine_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5.0f64..5.0).prop_map(Expr::Const),
        (0usize..3).prop_map(Expr::Var),
        (0usize..2).prop_map(Expr::Sample),
    ];
    leaf.prop_recursive(4, 32, 2, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Sub(b(x), b(y))),
            (inner.clone(), -4.0f64..4.0)
                .prop_map(move |(x, c)| Expr::Mul(b(Expr::Const(c)), b(x))),
            (inner.clone(), 0.5f64..4.0).prop_map(move |(x, c)| Expr::Div(b(x), b(Expr::Const(c)))),
            inner.clone().prop_map(move |x| Expr::Neg(b(x))),
            inner.prop_map(move |x| Expr::Add(
                b(x.clone()),
                b(Expr::Mul(b(Expr::Exp(b(x))), b(Expr::Const(0.0))))
            )),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn print_parse_round_trip(e in tree()) {
        let folded = e.fold();
        prop_assume!(folded.is_ok());
        let e = folded.unwrap();
        let printed = e.to_string();
        let back = parse(&printed).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn eval_is_deterministic(e in tree(), x in prop::array::uniform3(-3.0f64..3.0)) {
        let mut params = Params::new();
        params.insert("a".into(), 0.7);
        params.insert("theta".into(), -1.3);
        let y = [0.25, 1.5];
        let first = e.eval(&x, &y, &params);
        let second = e.eval(&x, &y, &params);
        match (first, second) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            _ => prop_assert!(false),
        }
    }

    #[test]
    fn tape_agrees_with_tree(e in tree(), x in prop::array::uniform3(-3.0f64..3.0)) {
        let mut params = Params::new();
        params.insert("a".into(), 0.7);
        params.insert("theta".into(), -1.3);
        let resolved = e.resolve_params(&params);
        prop_assume!(resolved.is_ok());
        let e = resolved.unwrap();
        let y = [0.25, 1.5];
        let tape = Tape::compile(&e).unwrap();
        if let Ok(v) = e.eval_xy(&x, &y) {
            let t = tape.eval(&x, &y);
            prop_assert!(t == v || (t - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn affine_gradient_matches_coefficients(
        e in affine_tree(),
        x in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let y = [0.5, -2.0];
        let form = detect_affine(&e, &y, 3).expect("constructed affine");
        let g = grad_fd(&e, &x, &y, 0.0);
        prop_assume!(g.is_ok());
        let g = g.unwrap();
        for i in 0..3 {
            prop_assert!((g[i] - form.coeffs[i]).abs() < 1e-6, "{} vs {}", g[i], form.coeffs[i]);
        }
        let rebuilt = form.to_expr();
        for k in 0..10 {
            let p = [x[0] + k as f64, x[1] - 0.5 * k as f64, x[2] * k as f64];
            if let Ok(v) = e.eval_xy(&p, &y) {
                prop_assert!((rebuilt.eval_xy(&p, &[]).unwrap() - v).abs() < 1e-9 * v.abs().max(1.0));
            }
        }
    }
}
