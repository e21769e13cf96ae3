//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p whitney-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::oracle::{self, Verdict};
use common::{corpus, params, set, stratum, to_oracle, vars, xyt, xyz, MODES, UMBRELLA, WHITNEY};
use whitney::cli::{self, Command, Options};
use whitney::grassmann::{random_oriented_plane, rolle_scan, separates, OrientedPlane, Plane, TangentSample};
use whitney::kuo::{kuo_a_plane, kuo_b_offset, KuoFrame, Mode};
use whitney::polycore::Rational;
use whitney::refine::{certify, critical_locus, refine_pair, stratify_named, CertStatus};
use whitney::rng;
use whitney::semivariety::{sample_shells, singular_locus, Membership, Semivariety, Stratum};
use whitney::whitney::{classify_triple, probe_sing, small_tangent, GridSpec, Status, WhitneyError};
use whitney::Params;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_equivalence() -> Outcome {
    let p = params();
    let mut compared = 0;
    let mut bad = Vec::new();
    for t in corpus() {
        let (oa, ob) = oracle::classify(t.surface, &t.x, 100_000, 11);
        match classify_triple(&t.big, &t.small, &t.x, &p) {
            Ok(v) => {
                for (mode, want) in [(Mode::A, oa), (Mode::B, ob)] {
                    compared += 1;
                    let got = v.status(mode);
                    if got == Status::Inconclusive || to_oracle(got) != want {
                        bad.push(format!("{} {mode:?}: tool {got:?}, oracle {want:?}", t.name));
                    }
                }
            }
            Err(WhitneyError::NotInFrontier(_)) => {
                compared += 2;
                if (oa, ob) != (Verdict::NotInFrontier, Verdict::NotInFrontier) {
                    bad.push(format!("{}: tool not in frontier, oracle {oa:?}/{ob:?}", t.name));
                }
            }
            Err(e) => bad.push(format!("{}: {e}", t.name)),
        }
    }
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!(
        "{compared} verdicts, 0 disagreements (1e5 oracle samples per triple)"
    ))
}

/// Random coefficient `p/100` with `p` in `[50, 200]`.
fn coef(r: &mut rng::Rng) -> String {
    use rand::Rng as _;
    format!("{}/100", r.random_range(50..=200))
}

fn perturbed(k: u64) -> (Stratum, Stratum, Vec<f64>) {
    use rand::Rng as _;
    let mut r = rng::stream(2024, "perturbed", k);
    let t = r.random_range(-8i32..=8) as f64 / 8.0;
    let (v, (a, b)) = match k % 4 {
        0 => (xyt(), (coef(&mut r), coef(&mut r))),
        _ => (xyz(), (coef(&mut r), coef(&mut r))),
    };
    match k % 4 {
        0 => (
            stratum("W", 2, &[&format!("y^2 - {a}*t^2*x^2 - {b}*x^3")], &[&["x", "y"]], &v),
            stratum("T", 1, &["x", "y"], &[], &v),
            vec![0.0, 0.0, t],
        ),
        1 => (
            stratum("U", 2, &[&format!("x^2 - {a}*z*y^2 - {b}*x*y*z")], &[&["x", "y"]], &v),
            stratum("Z", 1, &["x", "y"], &[], &v),
            vec![0.0, 0.0, t.abs()],
        ),
        2 => (
            stratum("C", 2, &[&format!("x^2 + {a}*y^2 - {b}*z^2")], &[&["x", "y", "z"]], &v),
            stratum("O", 0, &["x", "y", "z"], &[], &v),
            vec![0.0, 0.0, 0.0],
        ),
        _ => (
            stratum("G", 2, &[&format!("z - {a}*x*y - {b}*y^2")], &[&["y", "z"]], &v),
            stratum("L", 1, &["y", "z"], &[], &v),
            vec![t, 0.0, 0.0],
        ),
    }
}

fn a_implies_b(v: &whitney::whitney::TripleVerdict) -> bool {
    !(v.a.status == Status::Irregular && v.b.status == Status::Regular)
}

fn a_irregular_implies_b_irregular() -> Outcome {
    let p = params();
    let mut checked = 0;
    let mut bad = Vec::new();
    let axis = |lo: f64, hi: f64| GridSpec::Segment {
        from: vec![0.0, 0.0, lo],
        to: vec![0.0, 0.0, hi],
        n: 9,
    };
    let probes = [
        (
            common::plane_line(),
            GridSpec::Segment {
                from: vec![-1.0, 0.0, 0.0],
                to: vec![1.0, 0.0, 0.0],
                n: 9,
            },
        ),
        (common::cone(), GridSpec::Points(vec![vec![0.0; 3]])),
        (common::umbrella(), axis(-1.0, 1.0)),
        (common::whitney_family(), axis(-1.0, 1.0)),
    ];
    for ((j, i), grid) in probes {
        let probe = probe_sing(&j, &i, &grid, &p).map_err(|e| e.to_string())?;
        for e in &probe.entries {
            if let Some(v) = &e.verdict {
                checked += 1;
                if !a_implies_b(v) {
                    bad.push(format!("{}/{} at {:?}", j.id, i.id, e.x));
                }
            }
        }
    }
    for k in 0..100 {
        let (j, i, x) = perturbed(k);
        match classify_triple(&j, &i, &x, &p) {
            Ok(v) => {
                checked += 1;
                if !a_implies_b(&v) {
                    bad.push(format!("perturbed #{k} at {x:?}"));
                }
            }
            Err(WhitneyError::NotInFrontier(_)) => {}
            Err(e) => bad.push(format!("perturbed #{k}: {e}")),
        }
    }
    ensure(bad.is_empty(), || {
        format!("a-irregular but b-regular: {}", bad.join("; "))
    })?;
    Ok(format!("{checked} classified points, none a-irregular and b-regular"))
}

fn kuo_consistency() -> Outcome {
    let p = params();
    let mut checked = 0;
    let mut bad = Vec::new();
    for t in corpus() {
        let Ok(v) = classify_triple(&t.big, &t.small, &t.x, &p) else {
            continue;
        };
        for mode in MODES {
            let c = v.check(mode);
            let positive = c.kuo_limits.iter().any(|&l| l > 1e-6);
            let irregular = c.direct_status == Status::Irregular;
            checked += 1;
            if positive != irregular {
                bad.push(format!(
                    "{} {mode:?}: limits {:?}, direct {:?}",
                    t.name, c.kuo_limits, c.direct_status
                ));
            }
        }
    }
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!("{checked} verdicts: positive Kuo limit iff direct irregular"))
}

fn kuo_bounds() -> Outcome {
    let p = params();
    let radii = p.radii();
    let mut n = 0usize;
    let eps = 1e-12;
    for (k, t) in corpus().into_iter().enumerate() {
        let Ok(tan) = small_tangent(&t.small, &t.x, &p) else {
            continue;
        };
        let frame = KuoFrame::new(t.x.clone(), tan);
        let s = frame.s() as f64;
        let shells = sample_shells(&t.big, &t.x, &radii, 160, None, 77 + k as u64, &p).map_err(|e| e.to_string())?;
        for smp in shells.shells.iter().flatten() {
            let pa = kuo_a_plane(&frame, &smp.tangent);
            ensure((-eps..=s + eps).contains(&pa), || {
                format!("{}: P^a = {pa} outside [0, {s}]", t.name)
            })?;
            if let Ok(pb) = kuo_b_offset(&frame, &smp.tangent, &smp.offset, p.tol_on) {
                ensure(pa <= pb + eps && pb <= s + 1.0 + eps, || {
                    format!("{}: P^a = {pa}, P^b = {pb}, s = {s}", t.name)
                })?;
            }
            n += 1;
        }
    }
    ensure(n >= 10_000, || format!("only {n} samples evaluated"))?;
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for ((j, i), x, mode) in [
        (common::whitney_family(), vec![0.0, 0.0, 0.0], Mode::B),
        (common::umbrella(), vec![0.0, 0.0, 0.0], Mode::A),
    ] {
        let probe = probe_sing(&j, &i, &GridSpec::Points(vec![x]), &p).map_err(|e| e.to_string())?;
        let r = refine_pair(&j, &i, &probe, mode, &p).map_err(|e| e.to_string())?;
        checked += r.monotonicity.checked;
        worst = worst.max(r.monotonicity.max_deficit);
    }
    ensure(checked > 0, || "refine produced no shared points".into())?;
    ensure(worst <= 1e-10, || format!("monotonicity deficit {worst:e}"))?;
    Ok(format!(
        "{n} samples within bounds; monotonicity at {checked} refined points, worst deficit {worst:.2e}"
    ))
}

fn frame_cols(o: &OrientedPlane) -> Vec<Vec<f64>> {
    let f = o.frame();
    (0..f.ncols()).map(|c| f.column(c).iter().copied().collect()).collect()
}

fn rolle_machinery() -> Outcome {
    let p = params();
    let shapes = [(2, 1), (3, 1), (3, 2), (4, 2)];
    let steps = 200;
    let (mut found, mut pairs) = (0, 0);
    let mut trial = 0u64;
    while pairs < 1000 {
        trial += 1;
        let (m, k) = shapes[trial as usize % shapes.len()];
        let mut r = rng::stream(5, "rolle-pair", trial);
        let t0 = random_oriented_plane(&mut r, m, k);
        let t1 = random_oriented_plane(&mut r, m, k);
        let l = random_oriented_plane(&mut r, m, m - k);
        if !separates(&l, &t0, &t1, p.tol_det).unwrap_or(false) {
            continue;
        }
        let (c0, c1) = (frame_cols(&t0), frame_cols(&t1));
        let frames: Vec<Vec<Vec<f64>>> = (0..=steps)
            .map(|q| {
                let s = q as f64 / steps as f64;
                c0.iter()
                    .zip(&c1)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - s) * x + s * y).collect())
                    .collect()
            })
            .collect();
        // Skip the rare pairs whose straight-line frame path nearly degenerates.
        let degenerate = frames.iter().any(|cols: &Vec<Vec<f64>>| {
            let a = whitney::linalg::from_rows(cols, m).transpose();
            a.singular_values().min() < 0.05
        });
        if degenerate {
            continue;
        }
        pairs += 1;
        let path: Vec<TangentSample> = frames
            .iter()
            .map(|cols| TangentSample::new(vec![0.0; m], Plane::from_columns(cols, m)))
            .collect();
        if let Ok(Some(_)) = rolle_scan(&path, &l, p.tol_det) {
            found += 1;
        }
    }
    let mut false_pos = 0;
    let mut constant = 0;
    trial = 0;
    while constant < 1000 {
        trial += 1;
        let (m, k) = shapes[trial as usize % shapes.len()];
        let mut r = rng::stream(6, "rolle-constant", trial);
        let t = random_oriented_plane(&mut r, m, k);
        let l = random_oriented_plane(&mut r, m, m - k);
        if whitney::grassmann::orientation_det(&t, &l).map_or(true, |d| d.abs() <= p.tol_det) {
            continue;
        }
        constant += 1;
        let path = vec![TangentSample::new(vec![0.0; m], t.plane()); 50];
        if !matches!(rolle_scan(&path, &l, p.tol_det), Ok(None)) {
            false_pos += 1;
        }
    }
    ensure(found == pairs && false_pos == 0, || {
        format!("separated: {found}/{pairs} found; constant: {false_pos}/{constant} false positives")
    })?;
    Ok(format!(
        "{found}/{pairs} separated paths found, {false_pos}/{constant} false positives"
    ))
}

fn all_vanish(s: &Semivariety, point: &[Rational]) -> bool {
    s.pieces.iter().any(|piece| {
        piece
            .equations
            .iter()
            .all(|q| q.eval_exact(point).unwrap() == Rational::from_integer(0.into()))
    })
}

fn singular_locus_exactness() -> Outcome {
    use rand::Rng as _;
    let p = params();
    let v = xyz();
    let q = |n: i64, d: i64| Rational::new(n.into(), d.into());
    let mut r = rng::stream(8, "sing-locus", 0);

    let umb = singular_locus(&set(&[UMBRELLA], &v), 2).map_err(|e| e.to_string())?;
    for n in -8..=8 {
        let z = q(n, 3);
        ensure(all_vanish(&umb, &[q(0, 1), q(0, 1), z.clone()]), || {
            format!("umbrella locus misses (0,0,{z})")
        })?;
    }
    for _ in 0..200 {
        let z: f64 = r.random_range(-2.0..2.0);
        ensure(
            umb.membership(&[0.0, 0.0, z], p.tol_on).unwrap() == Membership::Inside,
            || format!("axis sample (0,0,{z}) not in the umbrella locus"),
        )?;
        let (a, b): (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if a.abs() < 1e-3 {
            continue;
        }
        let pt = oracle::Surface::Umbrella.point(a, b);
        ensure(umb.membership(&pt, p.tol_on).unwrap() == Membership::Outside, || {
            format!("regular umbrella point {pt:?} in the locus")
        })?;
    }

    let cone_locus = singular_locus(&set(&[common::CONE], &v), 2).map_err(|e| e.to_string())?;
    ensure(all_vanish(&cone_locus, &[q(0, 1), q(0, 1), q(0, 1)]), || {
        "cone locus misses the origin".into()
    })?;
    for _ in 0..200 {
        let (u, a): (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(0.0..std::f64::consts::TAU));
        if u.abs() < 1e-3 {
            continue;
        }
        let pt = oracle::Surface::Cone.point(u, a);
        ensure(
            cone_locus.membership(&pt, p.tol_on).unwrap() == Membership::Outside,
            || format!("regular cone point {pt:?} in the locus"),
        )?;
    }
    // Nothing else on the coordinate axes either.
    for axis in 0..3 {
        let mut pt = vec![q(0, 1), q(0, 1), q(0, 1)];
        pt[axis] = q(1, 2);
        ensure(!all_vanish(&cone_locus, &pt), || format!("cone locus contains {pt:?}"))?;
    }

    let sphere = singular_locus(&set(&["x^2 + y^2 + z^2 - 1"], &v), 2).map_err(|e| e.to_string())?;
    ensure(sphere.pieces.is_empty(), || {
        format!("sphere locus has {} pieces", sphere.pieces.len())
    })?;
    Ok("umbrella -> z-axis, cone -> origin, sphere -> empty".into())
}

fn critical_locus_exactness() -> Outcome {
    let p = params();
    let v2 = vars(&["x", "y"]);
    let circle = stratum("C", 1, &["x^2 + y^2 - 1"], &[], &v2);
    let l = OrientedPlane::from_frame(&[vec![0.0, 1.0]], 2);
    let crit = critical_locus(&circle, &l, &p).map_err(|e| e.to_string())?;
    let mut hit = [false, false];
    for pt in &crit.points {
        let k = if pt[0] > 0.0 { 0 } else { 1 };
        let target = [1.0 - 2.0 * k as f64, 0.0];
        let d = ((pt[0] - target[0]).powi(2) + (pt[1] - target[1]).powi(2)).sqrt();
        ensure(d <= 1e-10, || format!("critical point {pt:?} is {d:e} from {target:?}"))?;
        hit[k] = true;
    }
    ensure(hit == [true, true], || format!("critical points {:?}", crit.points))?;

    let v3 = xyz();
    let sphere = stratum("S", 2, &["x^2 + y^2 + z^2 - 1"], &[], &v3);
    let l = OrientedPlane::from_frame(&[vec![0.0, 0.0, 1.0]], 3);
    let crit = critical_locus(&sphere, &l, &p).map_err(|e| e.to_string())?;
    let sys = crit.defining_system.ok_or("no defining system for the sphere")?;
    let residual = |pt: &[f64]| -> f64 {
        sys.pieces
            .iter()
            .map(|piece| {
                piece
                    .equations
                    .iter()
                    .map(|q| q.eval(pt).unwrap().abs())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    };
    for k in 0..20 {
        let a = k as f64 * std::f64::consts::TAU / 20.0 + 0.1;
        let pt = [a.cos(), a.sin(), 0.0];
        ensure(residual(&pt) <= 1e-10, || {
            format!("equator point {pt:?} residual {:e}", residual(&pt))
        })?;
    }
    for k in 0..20 {
        let a = k as f64 * std::f64::consts::TAU / 20.0;
        let z = if k % 2 == 0 { 0.3 } else { -0.7 } * (1.0 + k as f64 / 40.0);
        let rho = (1.0 - z * z).sqrt();
        let pt = [rho * a.cos(), rho * a.sin(), z];
        ensure(residual(&pt) > 1e-6, || {
            format!("off-equator point {pt:?} satisfies the system")
        })?;
    }
    Ok(format!(
        "circle -> {} samples, all at (+-1,0); sphere equator 20/20 on, 20/20 off",
        crit.points.len()
    ))
}

fn end_to_end() -> Outcome {
    let p = params();
    let mut lines = Vec::new();
    for (name, v, eq) in [("umbrella", xyz(), UMBRELLA), ("whitney", xyt(), WHITNEY)] {
        let set = set(&[eq], &v);
        let cert = stratify_named(&set, &v, Mode::B, &p).map_err(|e| format!("{name}: {e}"))?;
        ensure(cert.status == CertStatus::Certified, || {
            format!("{name}: status {:?}", cert.status)
        })?;
        ensure(cert.strata.len() <= 6, || {
            format!("{name}: {} strata", cert.strata.len())
        })?;
        ensure(cert.params.max_depth == 4, || {
            format!("{name}: max_depth {}", cert.params.max_depth)
        })?;
        let fresh = certify(&cert, &set, &Params::with_seed(4242)).map_err(|e| e.to_string())?;
        ensure(fresh.status == CertStatus::Certified, || {
            format!("{name}: fresh certify {:?}", fresh.status)
        })?;
        for s in &cert.strata {
            let cut =
                certify(&cert.without_stratum(&s.id), &set, &Params::with_seed(4242)).map_err(|e| e.to_string())?;
            ensure(cut.status == CertStatus::Refuted, || {
                format!("{name}: deleting {} gives {:?}", s.id, cut.status)
            })?;
        }
        lines.push(format!("{name}: {} strata, deletions refuted", cert.strata.len()));
    }
    Ok(lines.join("; "))
}

fn problem(name: &str) -> String {
    let path = format!("{}/../../problems/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn reproducibility() -> Outcome {
    for name in ["umbrella.json", "whitney_example.json"] {
        let text = problem(name);
        let run = |seed: u64| {
            let opts = Options {
                seed: Some(seed),
                ..Options::default()
            };
            cli::run(Command::Stratify, name, &text, &opts).map_err(|e| e.to_string())
        };
        let (a, b) = (run(17)?, run(17)?);
        ensure(a.report == b.report && a.artifacts == b.artifacts, || {
            format!("{name}: reports differ")
        })?;
        ensure(a.exit_code == b.exit_code, || format!("{name}: exit codes differ"))?;
    }
    let mut verdicts = 0;
    for t in corpus() {
        let per_seed: Vec<Option<(Status, Status)>> = [0u64, 1, 99]
            .iter()
            .map(|&s| {
                classify_triple(&t.big, &t.small, &t.x, &Params::with_seed(s))
                    .ok()
                    .map(|v| (v.status(Mode::A), v.status(Mode::B)))
            })
            .collect();
        ensure(per_seed.windows(2).all(|w| w[0] == w[1]), || {
            format!("{}: {per_seed:?}", t.name)
        })?;
        verdicts += 1;
    }
    Ok(format!(
        "stratify reports byte-identical per seed; {verdicts} corpus triples agree across 3 seeds"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 a-irregular implies b-irregular", a_irregular_implies_b_irregular),
        ("3 Kuo limits vs direct check", kuo_consistency),
        ("4 Kuo bounds and monotonicity", kuo_bounds),
        ("5 Rolle scan", rolle_machinery),
        ("6 singular locus", singular_locus_exactness),
        ("7 critical locus", critical_locus_exactness),
        ("8 end-to-end stratify", end_to_end),
        ("9 reproducibility", reproducibility),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS criterion {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
