//! Brute-force regularity check that knows nothing about the crate.
//!
//! Each corpus surface comes with an explicit parametrization. Points near
//! the base point are drawn in parameter space around the preimages of the
//! base point, tangent planes come from the parameter derivatives, and the
//! two conditions are read off directly: the distance from the small
//! stratum's tangent vectors to the tangent plane (a), and from secant
//! directions between the strata to the tangent plane (b). The verdict is
//! the sup of the defect over shrinking balls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    /// `(u, v, 0)` over the x-axis.
    Plane,
    /// `(u cos v, u sin v, u)` over the origin.
    Cone,
    /// `(u v, u, v^2)`, which is `x^2 = z y^2`, over the z-axis.
    Umbrella,
    /// `(w^2 - t^2, (w^2 - t^2) w, t)`, which is `y^2 = t^2 x^2 + x^3`, over the t-axis.
    Whitney,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Regular,
    Irregular,
    NotInFrontier,
    Undecided,
}

pub type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

impl Surface {
    pub fn point(self, u: f64, v: f64) -> V3 {
        match self {
            Surface::Plane => [u, v, 0.0],
            Surface::Cone => [u * v.cos(), u * v.sin(), u],
            Surface::Umbrella => [u * v, u, v * v],
            Surface::Whitney => {
                let x = u * u - v * v;
                [x, x * u, v]
            }
        }
    }

    fn partials(self, u: f64, v: f64) -> (V3, V3) {
        match self {
            Surface::Plane => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            Surface::Cone => ([v.cos(), v.sin(), 1.0], [-u * v.sin(), u * v.cos(), 0.0]),
            Surface::Umbrella => ([v, 1.0, 0.0], [u, 0.0, 2.0 * v]),
            Surface::Whitney => ([2.0 * u, 3.0 * u * u - v * v, 0.0], [-2.0 * v, -2.0 * u * v, 1.0]),
        }
    }

    /// Unit tangent vectors of the small stratum (a line or a point).
    fn small_tangent(self) -> Vec<V3> {
        match self {
            Surface::Plane => vec![[1.0, 0.0, 0.0]],
            Surface::Cone => vec![],
            Surface::Umbrella | Surface::Whitney => vec![[0.0, 0.0, 1.0]],
        }
    }

    fn on_small(self, p: V3) -> bool {
        match self {
            Surface::Plane => p[1] == 0.0 && p[2] == 0.0,
            Surface::Cone => p == [0.0; 3],
            Surface::Umbrella | Surface::Whitney => p[0] == 0.0 && p[1] == 0.0,
        }
    }

    /// Nearest point of the small stratum.
    fn foot(self, p: V3) -> V3 {
        match self {
            Surface::Plane => [p[0], 0.0, 0.0],
            Surface::Cone => [0.0; 3],
            Surface::Umbrella | Surface::Whitney => [0.0, 0.0, p[2]],
        }
    }

    /// Parameter values mapping to `x` (the cone is handled separately).
    fn preimages(self, x: V3) -> Vec<[f64; 2]> {
        match self {
            Surface::Plane => vec![[x[0], x[1]]],
            Surface::Cone => vec![],
            Surface::Umbrella => {
                let c = x[2];
                if c > 0.0 {
                    vec![[0.0, c.sqrt()], [0.0, -c.sqrt()]]
                } else if c == 0.0 {
                    vec![[0.0, 0.0]]
                } else {
                    vec![]
                }
            }
            Surface::Whitney => {
                let c = x[2];
                if c == 0.0 {
                    vec![[0.0, 0.0]]
                } else {
                    vec![[c, c], [-c, c]]
                }
            }
        }
    }
}

/// Offsets in parameter space: half uniform in angle, half hugging the
/// coordinate axes with log-uniform slope so that thin sectors (where the
/// defects live for the umbrella and the Whitney family) are hit at every
/// scale.
fn direction(rng: &mut ChaCha8Rng) -> [f64; 2] {
    if rng.random_bool(0.5) {
        let a = rng.random_range(0.0..TAU);
        [a.cos(), a.sin()]
    } else {
        let c = 10f64.powf(rng.random_range(-8.0..2.0));
        let s1 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let s2 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let n = (1.0 + c * c).sqrt();
        if rng.random_bool(0.5) {
            [s1 / n, s2 * c / n]
        } else {
            [s1 * c / n, s2 / n]
        }
    }
}

/// Orthogonal projection onto span(a, b), or `None` when degenerate.
fn tangent_projector(a: V3, b: V3) -> Option<impl Fn(V3) -> V3> {
    let na = norm(a);
    if na == 0.0 {
        return None;
    }
    let e1 = scale(a, 1.0 / na);
    let b2 = sub(b, scale(e1, dot(b, e1)));
    let nb = norm(b2);
    if nb <= 1e-12 * norm(b).max(na) {
        return None;
    }
    let e2 = scale(b2, 1.0 / nb);
    Some(move |v: V3| {
        let p1 = scale(e1, dot(v, e1));
        let p2 = scale(e2, dot(v, e2));
        [p1[0] + p2[0], p1[1] + p2[1], p1[2] + p2[2]]
    })
}

/// One evaluated point: distance to the base point and the two defects.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub dist: f64,
    pub a: f64,
    pub b: f64,
}

pub const MAX_RADIUS: f64 = 1e-2;
pub const DECISION_RADIUS: f64 = 1e-5;
pub const IRREGULAR_AT: f64 = 0.2;
pub const REGULAR_BELOW: f64 = 0.02;

/// `n` samples of the surface within `MAX_RADIUS` of `x`, each paired with
/// points of the small stratum: the foot point, a random point at
/// comparable distance, and a point sliding along the small stratum.
pub fn samples(surface: Surface, x: V3, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pre = surface.preimages(x);
    let mut out = Vec::with_capacity(n);
    if surface != Surface::Cone && pre.is_empty() {
        return out;
    }
    let small = surface.small_tangent();
    let mut attempts = 0;
    while out.len() < n && attempts < 20 * n {
        attempts += 1;
        let lam = 10f64.powf(rng.random_range(-7.0..-1.5));
        let (u, v) = if surface == Surface::Cone {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (sign * lam, rng.random_range(0.0..TAU))
        } else {
            let c = pre[rng.random_range(0..pre.len())];
            let d = direction(&mut rng);
            (c[0] + lam * d[0], c[1] + lam * d[1])
        };
        let p = surface.point(u, v);
        let dist = norm(sub(p, x));
        if dist > MAX_RADIUS || dist == 0.0 || surface.on_small(p) {
            continue;
        }
        let (du, dv) = surface.partials(u, v);
        let Some(proj) = tangent_projector(du, dv) else {
            continue;
        };
        let defect = |e: V3| norm(sub(e, proj(e)));
        let a = small.iter().map(|&e| defect(e)).fold(0.0, f64::max);
        let mut ends = vec![surface.foot(p)];
        if let Some(&e) = small.first() {
            let s = rng.random_range(-2.0..2.0) * dist;
            ends.push([x[0] + s * e[0], x[1] + s * e[1], x[2] + s * e[2]]);
            // Slow pair: the small-stratum point moves away from the foot
            // much faster than `p` approaches it.
            let f = surface.foot(p);
            let h = norm(sub(p, f));
            let s = (h * 10f64.powf(rng.random_range(0.0..4.0))).min(dist);
            let s = if rng.random_bool(0.5) { s } else { -s };
            ends.push([f[0] + s * e[0], f[1] + s * e[1], f[2] + s * e[2]]);
        }
        let mut b: f64 = 0.0;
        for q in ends {
            let sec = sub(p, q);
            let len = norm(sec);
            if len > 0.0 {
                b = b.max(defect(scale(sec, 1.0 / len)));
            }
        }
        out.push(Sample { dist, a, b });
    }
    out
}

/// Largest defect over samples within `radius`.
pub fn sup_defect(samples: &[Sample], radius: f64, b: bool) -> Option<f64> {
    samples
        .iter()
        .filter(|s| s.dist <= radius)
        .map(|s| if b { s.b } else { s.a })
        .reduce(f64::max)
}

pub fn decide(samples: &[Sample], b: bool) -> Verdict {
    if samples.is_empty() {
        return Verdict::NotInFrontier;
    }
    match sup_defect(samples, DECISION_RADIUS, b) {
        None => Verdict::Undecided,
        Some(d) if d >= IRREGULAR_AT => Verdict::Irregular,
        Some(d) if d <= REGULAR_BELOW => Verdict::Regular,
        Some(_) => Verdict::Undecided,
    }
}

/// Oracle verdicts `(a, b)` at `x` from `n` samples.
pub fn classify(surface: Surface, x: &[f64], n: usize, seed: u64) -> (Verdict, Verdict) {
    let x = [x[0], x[1], x[2]];
    let s = samples(surface, x, n, seed);
    (decide(&s, false), decide(&s, true))
}
