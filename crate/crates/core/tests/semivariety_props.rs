mod common;

use common::oracle::Surface;
use common::{set, xyt, xyz, UMBRELLA, WHITNEY};
use proptest::prelude::*;
use whitney::semivariety::{filtrate, newton_project, sample_shells, singular_locus, Membership};
use whitney::Params;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    // Equations only: strict inequalities get a tolerance-sized margin, so
    // a looser tolerance can make them less certain.
    fn membership_is_monotone_in_tolerance(
        p in prop::collection::vec(-1.5f64..1.5, 3),
        t1 in 1e-12f64..1e-2,
        scale in 1.0f64..10.0,
    ) {
        let s = set(&["x^2 + y^2 + z^2 - 1", "x*y - z^2 + 1/4"], &xyz());
        let a = s.membership(&p, t1).unwrap();
        let b = s.membership(&p, t1 * scale).unwrap();
        prop_assert!(b <= a, "{a:?} at {t1}, {b:?} at {}", t1 * scale);
    }

    #[test]
    fn newton_lands_on_the_umbrella(p in prop::collection::vec(-1.0f64..1.0, 3)) {
        let s = set(&[UMBRELLA], &xyz());
        if let Ok(q) = newton_project(&s.pieces[0], &p, 1e-12, 200) {
            let r = s.pieces[0].equations[0].eval(&q).unwrap();
            prop_assert!(r.abs() <= 1e-10, "residual {r}");
        }
    }

    #[test]
    fn singular_locus_excludes_regular_points(u in -1.0f64..1.0, v in -1.0f64..1.0) {
        prop_assume!(u.abs() > 1e-2 || v.abs() > 1e-2);
        let p = Params::default();
        let loc = singular_locus(&set(&[WHITNEY], &xyt()), 2).unwrap();
        let y = Surface::Whitney.point(u, v);
        prop_assume!(y[0].abs() > 1e-3 || y[1].abs() > 1e-3);
        prop_assert_eq!(loc.membership(&y, p.tol_on).unwrap(), Membership::Outside);
    }
}

#[test]
fn filtration_levels_are_nested() {
    let p = Params::default();
    for (eq, vars) in [(UMBRELLA, xyz()), (WHITNEY, xyt()), (common::CONE, xyz())] {
        let f = filtrate(&set(&[eq], &vars), None, &p).unwrap();
        for w in f.levels.windows(2) {
            assert!(w[0].dim < w[1].dim);
            for q in &w[0].samples {
                assert_ne!(
                    w[1].set.membership(q, p.tol_on).unwrap(),
                    Membership::Outside,
                    "{eq}: {q:?}"
                );
            }
        }
        assert_eq!(f.levels.last().unwrap().dim, 2);
    }
}

#[test]
fn whitney_locus_is_the_t_axis() {
    let p = Params::default();
    let loc = singular_locus(&set(&[WHITNEY], &xyt()), 2).unwrap();
    for k in -10..=10 {
        let t = k as f64 / 5.0;
        assert_eq!(loc.membership(&[0.0, 0.0, t], p.tol_on).unwrap(), Membership::Inside);
    }
}

#[test]
fn shell_samples_lie_on_the_set_and_in_their_shell() {
    let p = Params::default();
    let (j, _) = common::umbrella();
    let x = [0.0, 0.0, 1.0];
    let radii = [1e-1, 1e-2, 1e-3];
    let sh = sample_shells(&j, &x, &radii, 24, None, 5, &p).unwrap();
    let f = &j.carrier.pieces[0].equations[0];
    for (k, shell) in sh.shells.iter().enumerate() {
        assert!(!shell.is_empty(), "shell {k} empty");
        for s in shell {
            let y: Vec<f64> = x.iter().zip(&s.offset).map(|(a, b)| a + b).collect();
            let r = whitney::linalg::norm(&s.offset);
            assert!(
                r >= radii[k] / 2.0 - 1e-12 && r <= 2.0 * radii[k] + 1e-12,
                "|u| = {r} in shell {k}"
            );
            assert!(f.eval(&y).unwrap().abs() <= 1e-9);
            assert_eq!(s.tangent.dim(), 2);
        }
    }
}
