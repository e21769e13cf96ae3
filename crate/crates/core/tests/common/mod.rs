#![allow(dead_code)]

pub mod oracle;

use whitney::kuo::Mode;
use whitney::parse_poly;
use whitney::semivariety::{BasicSet, Semivariety, Stratum};
use whitney::whitney::Status;
use whitney::Params;

pub fn vars(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn set(eqs: &[&str], vars: &[String]) -> Semivariety {
    let eqs = eqs.iter().map(|e| parse_poly(e, vars).unwrap()).collect();
    Semivariety::from_piece(BasicSet::new(eqs, vec![], vars.len()).unwrap())
}

pub fn set_with(eqs: &[&str], ineqs: &[&str], vars: &[String]) -> Semivariety {
    let p = |t: &[&str]| t.iter().map(|e| parse_poly(e, vars).unwrap()).collect();
    Semivariety::from_piece(BasicSet::new(p(eqs), p(ineqs), vars.len()).unwrap())
}

pub fn stratum(id: &str, dim: usize, eqs: &[&str], excluded: &[&[&str]], vars: &[String]) -> Stratum {
    let mut s = Stratum::new(id, dim, set(eqs, vars));
    s.exclusions = excluded.iter().map(|e| set(e, vars)).collect();
    s
}

pub fn xyz() -> Vec<String> {
    vars(&["x", "y", "z"])
}

pub fn xyt() -> Vec<String> {
    vars(&["x", "y", "t"])
}

pub const UMBRELLA: &str = "x^2 - z*y^2";
pub const WHITNEY: &str = "y^2 - t^2*x^2 - x^3";
pub const CONE: &str = "x^2 + y^2 - z^2";

/// `{z = 0}` minus the x-axis, over the x-axis.
pub fn plane_line() -> (Stratum, Stratum) {
    let v = xyz();
    (
        stratum("P", 2, &["z"], &[&["y", "z"]], &v),
        stratum("L", 1, &["y", "z"], &[], &v),
    )
}

pub fn cone() -> (Stratum, Stratum) {
    let v = xyz();
    (
        stratum("C", 2, &[CONE], &[&["x", "y", "z"]], &v),
        stratum("O", 0, &["x", "y", "z"], &[], &v),
    )
}

pub fn umbrella() -> (Stratum, Stratum) {
    let v = xyz();
    (
        stratum("U", 2, &[UMBRELLA], &[&["x", "y"]], &v),
        stratum("Z", 1, &["x", "y"], &[], &v),
    )
}

pub fn whitney_family() -> (Stratum, Stratum) {
    let v = xyt();
    (
        stratum("W", 2, &[WHITNEY], &[&["x", "y"]], &v),
        stratum("T", 1, &["x", "y"], &[], &v),
    )
}

pub struct CorpusTriple {
    pub name: &'static str,
    pub big: Stratum,
    pub small: Stratum,
    pub x: Vec<f64>,
    pub surface: oracle::Surface,
}

pub fn corpus() -> Vec<CorpusTriple> {
    use oracle::Surface;
    let mut out = Vec::new();
    let mut push = |name, (big, small): (Stratum, Stratum), x: [f64; 3], surface| {
        out.push(CorpusTriple {
            name,
            big,
            small,
            x: x.to_vec(),
            surface,
        })
    };
    push("plane/line at 0", plane_line(), [0.0, 0.0, 0.0], Surface::Plane);
    push("plane/line at (0.5,0,0)", plane_line(), [0.5, 0.0, 0.0], Surface::Plane);
    push("cone/origin", cone(), [0.0, 0.0, 0.0], Surface::Cone);
    push("umbrella at 0", umbrella(), [0.0, 0.0, 0.0], Surface::Umbrella);
    push("umbrella at (0,0,1)", umbrella(), [0.0, 0.0, 1.0], Surface::Umbrella);
    push("umbrella at (0,0,-1)", umbrella(), [0.0, 0.0, -1.0], Surface::Umbrella);
    push("whitney at 0", whitney_family(), [0.0, 0.0, 0.0], Surface::Whitney);
    push("whitney at t=1", whitney_family(), [0.0, 0.0, 1.0], Surface::Whitney);
    push("whitney at t=-1", whitney_family(), [0.0, 0.0, -1.0], Surface::Whitney);
    out
}

pub fn params() -> Params {
    Params::default()
}

pub fn to_oracle(s: Status) -> oracle::Verdict {
    match s {
        Status::Regular => oracle::Verdict::Regular,
        Status::Irregular => oracle::Verdict::Irregular,
        Status::Inconclusive => oracle::Verdict::Undecided,
    }
}

pub const MODES: [Mode; 2] = [Mode::A, Mode::B];
