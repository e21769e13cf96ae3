use proptest::prelude::*;
use whitney::parse_poly;
use whitney::polycore::{jacobian, minors, rational_from_f64, CompiledSystem, Polynomial, Rational};

fn names() -> Vec<String> {
    ["x", "y", "z"].iter().map(|s| s.to_string()).collect()
}

fn poly() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec((-5i64..=5, prop::collection::vec(0u32..=3, 3)), 0..6).prop_map(|terms| {
        Polynomial::from_terms(3, terms.into_iter().map(|(c, e)| (Rational::from_integer(c.into()), e)))
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3)
}

fn det2(a: &[Vec<f64>], r: [usize; 2], c: [usize; 2]) -> f64 {
    a[r[0]][c[0]] * a[r[1]][c[1]] - a[r[0]][c[1]] * a[r[1]][c[0]]
}

proptest! {
    #[test]
    fn derivative_is_linear(f in poly(), g in poly(), c in -4i64..=4) {
        let c = Rational::from_integer(c.into());
        let lhs = (&f + &g.scale(&c)).derivative(1);
        let rhs = &f.derivative(1) + &g.derivative(1).scale(&c);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn mixed_partials_commute(f in poly(), i in 0usize..3, j in 0usize..3) {
        prop_assert_eq!(f.derivative(i).derivative(j), f.derivative(j).derivative(i));
    }

    #[test]
    fn jacobian_matches_central_differences(f in poly(), x in point()) {
        let jac = jacobian(std::slice::from_ref(&f)).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (f.eval(&a).unwrap() - f.eval(&b).unwrap()) / (2.0 * h);
            let exact = jac[0][k].eval(&x).unwrap();
            prop_assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }

    #[test]
    fn float_and_exact_evaluation_agree(f in poly(), x in point()) {
        let q: Vec<Rational> = x.iter().map(|&v| rational_from_f64(v)).collect();
        let exact: f64 = num_traits::ToPrimitive::to_f64(&f.eval_exact(&q).unwrap()).unwrap();
        let float = f.eval(&x).unwrap();
        prop_assert!((exact - float).abs() <= 1e-10 * (1.0 + exact.abs()));
        let compiled = CompiledSystem::new(3, std::slice::from_ref(&f)).residual(&x)[0];
        prop_assert!((compiled - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn symbolic_minors_match_numeric_determinants(f in poly(), g in poly(), x in point()) {
        let sys = [f, g];
        let m = minors(&jacobian(&sys).unwrap(), 2).unwrap();
        let numeric = CompiledSystem::new(3, &sys).jacobian(&x);
        let cols = [[0, 1], [0, 2], [1, 2]];
        for (k, c) in cols.iter().enumerate() {
            let want = det2(&numeric, [0, 1], *c);
            let got = m[k].eval(&x).unwrap();
            prop_assert!((want - got).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn printing_round_trips(f in poly()) {
        let v = names();
        prop_assert_eq!(parse_poly(&f.to_text(&v), &v).unwrap(), f);
    }
}
