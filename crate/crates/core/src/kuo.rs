//! Kuo maps `P^a`, `P^b`, their shell traces and limit clustering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grassmann::{normal_part, plane_distance, Plane, TangentSample};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    A,
    B,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::A => "a",
            Mode::B => "b",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" => Ok(Mode::A),
            "b" => Ok(Mode::B),
            _ => Err(format!("mode must be `a` or `b`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KuoError {
    #[error("secant is tangent to the small stratum (|pi_i(y-x)| = {0:e})")]
    DegenerateSecant(f64),
    #[error("trace has {0} populated shells, need at least 3")]
    InsufficientTrace(usize),
}

/// Local frame of the small stratum at the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct KuoFrame {
    pub base: Vec<f64>,
    /// Orthonormal `e_1..e_s` spanning `T_x V_i`.
    pub small: Plane,
}

impl KuoFrame {
    pub fn new(base: Vec<f64>, small: Plane) -> KuoFrame {
        KuoFrame { base, small }
    }

    pub fn s(&self) -> usize {
        self.small.dim()
    }

    /// `pi_i`: projection onto the normal space of `V_i`.
    pub fn pi_normal(&self, v: &[f64]) -> Vec<f64> {
        linalg::sub(v, &self.small.project(v))
    }

    /// `pi_i^perp`: projection onto `T_x V_i`.
    pub fn pi_tangential(&self, v: &[f64]) -> Vec<f64> {
        self.small.project(v)
    }
}

/// `sum_t |pi_j(y, e_t)|^2`.
pub fn kuo_a_plane(frame: &KuoFrame, tangent: &Plane) -> f64 {
    (0..frame.s()).fold(0.0, |acc, t| {
        let n = normal_part(tangent, &frame.small.basis_vector(t));
        acc + linalg::dot(&n, &n)
    })
}

pub fn kuo_a(frame: &KuoFrame, t: &TangentSample) -> f64 {
    kuo_a_plane(frame, &t.tangent)
}

/// The extra `P^b` term for the offset `u = y - x`, or `None` when the
/// secant is (numerically) tangent to `V_i`.
pub fn secant_term(frame: &KuoFrame, tangent: &Plane, offset: &[f64], tol_on: f64) -> Option<f64> {
    let w = frame.pi_normal(offset);
    let nw = linalg::norm(&w);
    let nu = linalg::norm(offset);
    if nu == 0.0 || nw < tol_on * nu {
        return None;
    }
    let n = normal_part(tangent, &linalg::scale(&w, 1.0 / nw));
    Some(linalg::dot(&n, &n))
}

pub fn kuo_b(frame: &KuoFrame, t: &TangentSample, tol_on: f64) -> Result<f64, KuoError> {
    let offset = linalg::sub(&t.point, &frame.base);
    kuo_b_offset(frame, &t.tangent, &offset, tol_on)
}

pub fn kuo_b_offset(frame: &KuoFrame, tangent: &Plane, offset: &[f64], tol_on: f64) -> Result<f64, KuoError> {
    let a = kuo_a_plane(frame, tangent);
    match secant_term(frame, tangent, offset, tol_on) {
        Some(extra) => Ok(a + extra),
        None => Err(KuoError::DegenerateSecant(linalg::norm(&frame.pi_normal(offset)))),
    }
}

/// Kuo value of the requested kind; `P^b` falls back to `P^a` with the
/// degenerate flag set when the secant term is undefined.
pub fn kuo_value(frame: &KuoFrame, tangent: &Plane, offset: &[f64], mode: Mode, tol_on: f64) -> (f64, bool) {
    let a = kuo_a_plane(frame, tangent);
    match mode {
        Mode::A => (a, false),
        Mode::B => match secant_term(frame, tangent, offset, tol_on) {
            Some(extra) => (a + extra, false),
            None => (a, true),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub shell: usize,
    pub radius: f64,
    /// `y - x`, kept separately from `y` for precision on deep shells.
    pub offset: Vec<f64>,
    pub point: Vec<f64>,
    pub tangent: Plane,
    pub pa: f64,
    pub pb: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KuoTrace {
    pub radii: Vec<f64>,
    pub entries: Vec<TraceEntry>,
}

impl KuoTrace {
    pub fn populated_shells(&self) -> Vec<usize> {
        let mut shells: Vec<usize> = self.entries.iter().map(|e| e.shell).collect();
        shells.dedup();
        shells.sort_unstable();
        shells.dedup();
        shells
    }

    /// Indices of entries in the last half (rounded up) of populated shells.
    pub fn tail_indices(&self) -> Vec<usize> {
        let shells = self.populated_shells();
        let keep = shells.len().div_ceil(2);
        let cutoff = shells[shells.len() - keep..].first().copied().unwrap_or(0);
        (0..self.entries.len())
            .filter(|&i| self.entries[i].shell >= cutoff)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let m = self.entries.first().map(|e| e.point.len()).unwrap_or(0);
        let mut s = String::from("shell_index,radius");
        for k in 0..m {
            let _ = write!(s, ",y{k}");
        }
        s.push_str(",p_a,p_b\n");
        for e in &self.entries {
            let _ = write!(s, "{},{:.16e}", e.shell, e.radius);
            for c in &e.point {
                let _ = write!(s, ",{c:.16e}");
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", e.pa, e.pb);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    Planes,
    KuoA,
    KuoB,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representative {
    Scalar(f64),
    Plane(Plane),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCluster {
    pub representative: Representative,
    /// Indices into `KuoTrace::entries`.
    pub members: Vec<usize>,
    pub spread: f64,
}

impl LimitCluster {
    pub fn scalar(&self) -> Option<f64> {
        match &self.representative {
            Representative::Scalar(v) => Some(*v),
            Representative::Plane(_) => None,
        }
    }

    pub fn plane(&self) -> Option<&Plane> {
        match &self.representative {
            Representative::Plane(p) => Some(p),
            Representative::Scalar(_) => None,
        }
    }
}

/// Clusters the tail of a trace.
///
/// Scalars are swept in sorted order and a cluster is closed as soon as its
/// width would exceed `cluster_tol`. Planes use leader clustering with
/// radius `cluster_tol / 2`, which bounds the spread by `cluster_tol`.
/// Representatives come from the deepest shell that reaches a cluster, so
/// values that decay along the approach do not masquerade as limits.
/// Degenerate-secant entries are left out of `P^b` clustering.
pub fn limit_points(trace: &KuoTrace, what: LimitKind, cluster_tol: f64) -> Result<Vec<LimitCluster>, KuoError> {
    let populated = trace.populated_shells().len();
    if populated < 3 {
        return Err(KuoError::InsufficientTrace(populated));
    }
    let tail = trace.tail_indices();
    Ok(match what {
        LimitKind::Planes => cluster_planes(trace, &tail, cluster_tol),
        LimitKind::KuoA => cluster_scalars(trace, &tail, |e| Some(e.pa), cluster_tol),
        LimitKind::KuoB => cluster_scalars(trace, &tail, |e| (!e.degenerate).then_some(e.pb), cluster_tol),
    })
}

fn deepest_members(trace: &KuoTrace, members: &[usize]) -> Vec<usize> {
    let deepest = members.iter().map(|&i| trace.entries[i].shell).max().unwrap_or(0);
    members
        .iter()
        .copied()
        .filter(|&i| trace.entries[i].shell == deepest)
        .collect()
}

/// Groups `(index, value)` pairs with the sorted greedy sweep.
pub fn cluster_values(values: &[(usize, f64)], cluster_tol: f64) -> Vec<Vec<(usize, f64)>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut groups: Vec<Vec<(usize, f64)>> = Vec::new();
    for item in sorted {
        match groups.last_mut() {
            Some(g) if item.1 - g[0].1 <= cluster_tol => g.push(item),
            _ => groups.push(vec![item]),
        }
    }
    groups
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn cluster_scalars(
    trace: &KuoTrace,
    tail: &[usize],
    value: impl Fn(&TraceEntry) -> Option<f64>,
    cluster_tol: f64,
) -> Vec<LimitCluster> {
    let values: Vec<(usize, f64)> = tail
        .iter()
        .filter_map(|&i| value(&trace.entries[i]).map(|v| (i, v)))
        .collect();
    let mut clusters: Vec<LimitCluster> = cluster_values(&values, cluster_tol)
        .into_iter()
        .map(|g| {
            let members: Vec<usize> = g.iter().map(|p| p.0).collect();
            let spread = g.last().unwrap().1 - g[0].1;
            let mut deep: Vec<f64> = deepest_members(trace, &members)
                .into_iter()
                .filter_map(|i| value(&trace.entries[i]))
                .collect();
            LimitCluster {
                representative: Representative::Scalar(median(&mut deep)),
                members,
                spread,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.scalar().unwrap().total_cmp(&b.scalar().unwrap()));
    clusters
}

fn cluster_planes(trace: &KuoTrace, tail: &[usize], cluster_tol: f64) -> Vec<LimitCluster> {
    let mut leaders: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in tail {
        let p = &trace.entries[i].tangent;
        match leaders
            .iter_mut()
            .find(|(l, _)| plane_distance(&trace.entries[*l].tangent, p) <= cluster_tol / 2.0)
        {
            Some((_, members)) => members.push(i),
            None => leaders.push((i, vec![i])),
        }
    }
    let mut clusters: Vec<LimitCluster> = leaders
        .into_iter()
        .map(|(_, members)| {
            let mut spread: f64 = 0.0;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    spread = spread.max(plane_distance(&trace.entries[i].tangent, &trace.entries[j].tangent));
                }
            }
            let rep = deepest_members(trace, &members)[0];
            LimitCluster {
                representative: Representative::Plane(trace.entries[rep].tangent.clone()),
                members,
                spread,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        let pa = a.plane().unwrap().projector();
        let pb = b.plane().unwrap().projector();
        pa.iter()
            .zip(pb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    clusters
}

/// Shell radii where the second-order deviation of a curved `V_i` stays
/// below `tol_on`.
pub fn curvature_admissible(radii: &[f64], curvature: f64, tol_on: f64) -> Vec<bool> {
    radii.iter().map(|r| r * r * curvature < tol_on).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(s_axes: &[usize]) -> KuoFrame {
        KuoFrame::new(vec![0.0; 3], Plane::coordinate(3, s_axes))
    }

    #[test]
    fn kuo_a_examples() {
        let f = frame(&[0]);
        let t = TangentSample::new(vec![0.0; 3], Plane::coordinate(3, &[1, 2]));
        assert!((kuo_a(&f, &t) - 1.0).abs() < 1e-15);
        let t = TangentSample::new(vec![0.0; 3], Plane::coordinate(3, &[0, 2]));
        assert!(kuo_a(&f, &t).abs() < 1e-15);
        let f0 = KuoFrame::new(vec![0.0; 3], Plane::zero(3));
        assert_eq!(kuo_a(&f0, &t), 0.0);
    }

    #[test]
    fn kuo_b_examples() {
        let f = KuoFrame::new(vec![0.0, 0.0], Plane::zero(2));
        let t = TangentSample::new(vec![1.0, 1.0], Plane::coordinate(2, &[0]));
        assert!((kuo_b(&f, &t, 1e-9).unwrap() - 0.5).abs() < 1e-15);

        let f = KuoFrame::new(vec![0.0; 3], Plane::zero(3));
        let a = 0.3;
        let cone_tangent = Plane::from_columns(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]], 3);
        let t = TangentSample::new(vec![a, 0.0, a], cone_tangent);
        assert!(kuo_b(&f, &t, 1e-9).unwrap().abs() < 1e-15);
    }

    #[test]
    fn degenerate_secant_is_flagged() {
        let f = frame(&[2]);
        let t = TangentSample::new(vec![0.0, 0.0, 0.5], Plane::coordinate(3, &[0, 2]));
        assert!(matches!(kuo_b(&f, &t, 1e-9), Err(KuoError::DegenerateSecant(_))));
        let (v, degenerate) = kuo_value(&f, &t.tangent, &t.point, Mode::B, 1e-9);
        assert!(degenerate);
        assert_eq!(v, kuo_a(&f, &t));
    }

    fn trace_from(values: &[(usize, f64)]) -> KuoTrace {
        KuoTrace {
            radii: (0..12).map(|k| 0.25f64.powi(k)).collect(),
            entries: values
                .iter()
                .map(|&(shell, v)| TraceEntry {
                    shell,
                    radius: 0.25f64.powi(shell as i32),
                    offset: vec![0.0; 3],
                    point: vec![0.0; 3],
                    tangent: Plane::coordinate(3, &[0, 1]),
                    pa: v,
                    pb: v,
                    degenerate: false,
                })
                .collect(),
        }
    }

    #[test]
    fn tiny_values_form_one_cluster_at_zero() {
        let vals: Vec<(usize, f64)> = (0..6).flat_map(|s| [(s, 1e-11), (s, 3e-12)]).collect();
        let c = limit_points(&trace_from(&vals), LimitKind::KuoA, 0.02).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].scalar().unwrap() < 1e-10);
    }

    #[test]
    fn separated_values_form_two_clusters() {
        let vals: Vec<(usize, f64)> = (0..6).flat_map(|s| [(s, 0.0), (s, 1.0)]).collect();
        let c = limit_points(&trace_from(&vals), LimitKind::KuoB, 0.02).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].scalar(), Some(1.0));
        let planes = limit_points(&trace_from(&vals), LimitKind::Planes, 0.05).unwrap();
        assert_eq!(planes.len(), 1);
    }

    #[test]
    fn short_traces_are_rejected() {
        let vals = [(0, 0.0), (1, 0.0)];
        assert_eq!(
            limit_points(&trace_from(&vals), LimitKind::KuoA, 0.02),
            Err(KuoError::InsufficientTrace(2))
        );
    }
}
