mod common;

use common::{set, xyt, xyz, WHITNEY};
use whitney::kuo::Mode;
use whitney::refine::{certify, refine_pair, stratify_named, CertStatus, NewStratum};
use whitney::semivariety::Membership;
use whitney::whitney::{probe_sing, GridSpec};
use whitney::Params;

#[test]
fn whitney_refinement_yields_level_curves_through_the_origin() {
    let (j, i) = common::whitney_family();
    let p = Params::default();
    let probe = probe_sing(&j, &i, &GridSpec::Points(vec![vec![0.0; 3]]), &p).unwrap();
    let r = refine_pair(&j, &i, &probe, Mode::B, &p).unwrap();
    assert!(!r.strata.is_empty());
    assert!(r.contained.iter().all(|&c| c));
    assert!(r.monotonicity.checked > 0 && r.monotonicity.max_deficit <= 1e-10);
    let f = &j.carrier.pieces[0].equations[0];
    for s in &r.strata {
        let NewStratum::Level(l) = s else {
            panic!("expected level strata, got {:?}", s.summary().kind);
        };
        assert_eq!(l.stratum.dim, 1);
        assert!(l.points.len() >= 10);
        assert!(l.residuals.iter().all(|&e| e <= p.tol_level));
        for q in &l.points {
            assert!(f.eval(q).unwrap().abs() <= 1e-8);
        }
    }
}

#[test]
fn sphere_is_a_single_certified_stratum() {
    let v = xyz();
    let s = set(&["x^2 + y^2 + z^2 - 1"], &v);
    let p = Params::default();
    let c = stratify_named(&s, &v, Mode::B, &p).unwrap();
    assert_eq!(c.status, CertStatus::Certified);
    assert_eq!(c.strata.len(), 1);
    assert_eq!(c.strata[0].dim, 2);
}

#[test]
fn whitney_certificate_round_trips_and_rechecks() {
    let v = xyt();
    let s = set(&[WHITNEY], &v);
    let p = Params::default();
    let c = stratify_named(&s, &v, Mode::B, &p).unwrap();
    assert_eq!(c.status, CertStatus::Certified);
    let text = serde_json::to_string(&c).unwrap();
    let back: whitney::refine::StratificationCertificate = serde_json::from_str(&text).unwrap();
    assert_eq!(back, c);
    let strata = back.rebuild().unwrap();
    // Every origin-near point of the set is in exactly one stratum.
    for q in [[0.0, 0.0, 0.0], [0.0, 0.0, 0.5], [-0.25, 0.0, 0.5]] {
        let inside = strata
            .iter()
            .filter(|st| st.membership(&q, &p).unwrap() == Membership::Inside)
            .count();
        assert_eq!(inside, 1, "{q:?}");
    }
    let report = certify(&back, &s, &Params::with_seed(31)).unwrap();
    assert_eq!(report.status, CertStatus::Certified);
    assert!(report.orphans.is_empty() && report.overlaps.is_empty());
}
