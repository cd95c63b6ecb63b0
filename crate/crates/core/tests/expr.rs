use biham_core::expr::parse;
use biham_core::{Bindings, Expr};
use proptest::prelude::*;

const SYMBOLS: [&str; 4] = ["u", "v", "w", "t"];

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        prop::sample::select(SYMBOLS.to_vec()).prop_map(Expr::var),
        Just(Expr::param("alpha")),
        (-4i64..=4).prop_map(Expr::int),
        (-3i64..=3, 1i64..=4).prop_map(|(n, d)| Expr::ratio(n, d)),
    ]
}

/// Any tree of depth at most 8, including quotients and logarithms.
fn any_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(8, 48, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Expr::sum),
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Expr::product),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::quotient(a, b)),
            (inner.clone(), -2i64..=3).prop_map(|(a, n)| a.pow(n)),
            inner.clone().prop_map(|a| -a),
            inner.clone().prop_map(|a| a.exp()),
            inner.clone().prop_map(|a| a.sin()),
            inner.clone().prop_map(|a| a.cos()),
            inner.prop_map(|a| a.ln()),
        ]
    })
}

/// Smooth everywhere and of moderate size on the unit box.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Expr::sum),
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Expr::product),
            (inner.clone(), 0i64..=3).prop_map(|(a, n)| a.pow(n)),
            inner.clone().prop_map(|a| -a),
            inner.clone().prop_map(|a| a.sin().exp()),
            inner.clone().prop_map(|a| a.sin()),
            inner.prop_map(|a| a.cos()),
        ]
    })
}

fn point() -> impl Strategy<Value = Bindings> {
    prop::array::uniform5(-1.0f64..1.0).prop_map(|x| {
        Bindings::new().with("u", x[0]).with("v", x[1]).with("w", x[2]).with("t", x[3]).with("alpha", x[4])
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn simplify_is_idempotent(e in any_expr()) {
        let s = e.simplify();
        prop_assert_eq!(s.simplify(), s);
    }

    #[test]
    fn printing_reparses_to_a_fixed_point(e in any_expr()) {
        let p = parse(&e.to_string()).unwrap();
        prop_assert_eq!(parse(&p.to_string()).unwrap(), p.clone());
        let s = e.simplify();
        prop_assert_eq!(parse(&s.to_string()).unwrap().simplify(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn simplify_and_reparse_preserve_value(e in any_expr(), p in point()) {
        if let Ok(a) = e.evaluate(&p) {
            if a.is_finite() && a.abs() < 1e6 {
                if let Ok(b) = e.simplify().evaluate(&p) {
                    prop_assert!(close(a, b, 1e-9), "{} = {} vs {}", e, a, b);
                }
                let c = parse(&e.to_string()).unwrap().evaluate(&p).unwrap();
                prop_assert!(close(a, c, 1e-12), "{} = {} vs {}", e, a, c);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_match_central_differences(
        e in smooth_expr(),
        p in point(),
        sym in prop::sample::select(SYMBOLS.to_vec()),
    ) {
        let d = e.differentiate(sym).evaluate(&p).unwrap();
        let h = 1e-5;
        let x = p.get(sym).unwrap();
        let at = |y: f64| {
            let mut q = p.clone();
            q.set(sym, y);
            e.evaluate(&q).unwrap()
        };
        let fd = (at(x + h) - at(x - h)) / (2.0 * h);
        let f = at(x).abs();
        prop_assert!((d - fd).abs() <= 1e-6 * (1.0 + f + d.abs()), "d/d{} {} : {} vs {}", sym, e, d, fd);
    }
}

#[test]
fn constants_parse_exactly() {
    assert_eq!(parse("0.5").unwrap().simplify(), Expr::ratio(1, 2));
    assert_eq!(parse("1e-3").unwrap().simplify(), Expr::ratio(1, 1000));
    assert_eq!(parse("0.1*u").unwrap().differentiate("u"), Expr::ratio(1, 10));
}

#[test]
fn parameters_are_not_coordinates() {
    let e = parse("alpha*u^2 + exp(-2*alpha*t)").unwrap();
    assert!(e.differentiate("u").contains_symbol("alpha"));
    let b = Bindings::new().with("u", 2.0).with("alpha", 0.5).with("t", 0.0);
    assert_eq!(e.evaluate(&b).unwrap(), 3.0);
}
