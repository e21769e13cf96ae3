//! Whitney (a)/(b) checks for triples `(V_j, V_i, x)`, triple
//! classification and sampled probing of the irregular set.
//!
//! Every check runs two detectors on the same shell samples of `V_j`
//! around `x`. The Kuo detector clusters tail values of `P^a` / `P^b`. The
//! direct detector evaluates the conditions themselves: for (a) whether the
//! clustered limit planes contain `T_x V_i`, for (b) whether secants from
//! `y` to points of `V_i` (the base point, the foot of `y`, and slow points
//! at distance `|y - x|^{1/2}`) lie in the tangent plane at `y`. A verdict
//! is definitive only when both detectors agree.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::grassmann::{normal_part, GrassError, Plane};
use crate::kuo::{
    cluster_values, kuo_a_plane, kuo_value, limit_points, median, KuoFrame, KuoTrace, LimitKind, Mode, TraceEntry,
};
use crate::linalg;
use crate::params::Params;
use crate::rng;
use crate::semivariety::{component_labels, is_essential, sample_shells_with, Chart, Membership, SemiError, Stratum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Regular,
    Irregular,
    Inconclusive,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Regular => "regular",
            Status::Irregular => "irregular",
            Status::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WhitneyError {
    #[error("base point is not on the small stratum {0}")]
    NotOnSmallStratum(String),
    #[error("base point is not in the frontier of {0}: no samples of it near the point")]
    NotInFrontier(String),
    #[error("strata live in different ambient spaces ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cannot determine the tangent space of the small stratum: {0}")]
    SmallTangent(String),
    #[error("empty probe grid")]
    EmptyGrid,
    #[error(transparent)]
    Semi(#[from] SemiError),
    #[error(transparent)]
    Grass(#[from] GrassError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    Kuo,
    Direct,
    SlowSequence,
}

/// A sample that exhibits an irregularity; replaying `kuo_value` on
/// `(tangent, offset)` in the triple's frame gives `value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub mode: Mode,
    pub detector: Detector,
    pub shell: usize,
    pub radius: f64,
    pub point: Vec<f64>,
    pub offset: Vec<f64>,
    pub tangent: Plane,
    /// Kuo value of the sample.
    pub value: f64,
    /// Representative of the limit cluster the sample belongs to.
    pub limit: f64,
    /// Unit secant tested by the direct (b) detector, when one applies.
    pub secant: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub mode: Mode,
    pub status: Status,
    pub kuo_status: Status,
    pub direct_status: Status,
    /// Representatives of the Kuo-value limit clusters.
    pub kuo_limits: Vec<f64>,
    /// Representatives of the direct-defect limit clusters.
    pub direct_limits: Vec<f64>,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_shells: usize,
    pub populated_shells: usize,
    pub samples: usize,
    pub tail_samples: usize,
    pub degenerate_secants: usize,
    pub plane_clusters: usize,
    pub components: usize,
    pub essential_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleVerdict {
    pub big: String,
    pub small: String,
    pub x: Vec<f64>,
    pub a: ConditionCheck,
    pub b: ConditionCheck,
    /// Kuo-detector verdicts restricted to essential local components.
    /// Reported alongside, never folded into `a` / `b`.
    pub essential_a: Status,
    pub essential_b: Status,
    pub diagnostics: Diagnostics,
}

impl TripleVerdict {
    pub fn check(&self, mode: Mode) -> &ConditionCheck {
        match mode {
            Mode::A => &self.a,
            Mode::B => &self.b,
        }
    }

    pub fn status(&self, mode: Mode) -> Status {
        self.check(mode).status
    }
}

/// Shell samples of `V_j` around `x` with their Kuo data.
#[derive(Debug, Clone)]
pub struct Approach {
    pub frame: KuoFrame,
    pub trace: KuoTrace,
    /// Local component of each trace entry (`None` when unlabeled).
    pub labels: Vec<Option<usize>>,
    pub essential: Vec<bool>,
}

/// Tangent space of `V_i` at `x`: from the Jacobian when it has the right
/// rank there, otherwise from nearby samples of `V_i` (non-reduced
/// descriptions, such as singular loci, have degenerate Jacobians).
pub fn small_tangent(i: &Stratum, x: &[f64], params: &Params) -> Result<Plane, WhitneyError> {
    let m = x.len();
    if i.dim == 0 {
        return Ok(Plane::zero(m));
    }
    if let Ok(t) = i.tangent_at(x, params) {
        return Ok(t);
    }
    let chart = Chart::new(i, x)?;
    let rho = 1e-6 * linalg::norm(x).max(1.0);
    let mut rng = rng::stream(params.seed, "small-tangent", 0);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for k in 0..40 * (i.dim + 1) {
        let w = crate::semivariety::random_unit(&mut rng, m);
        let piece = k % chart.num_pieces().max(1);
        if chart.num_pieces() == 0 {
            break;
        }
        if let Some(u) = chart.project_loose(piece, &linalg::scale(&w, rho), params) {
            let n = linalg::norm(&u);
            if n >= 0.25 * rho && n <= 4.0 * rho {
                dirs.push(linalg::scale(&u, 1.0 / n));
            }
        }
    }
    if dirs.len() < 2 * i.dim {
        return Err(WhitneyError::SmallTangent(format!(
            "{} samples near the point",
            dirs.len()
        )));
    }
    // Principal directions of the sampled unit offsets.
    let a = DMatrix::from_fn(m, dirs.len(), |r, c| dirs[c][r]);
    let svd = a.svd(true, false);
    let u = svd.u.expect("U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[q].total_cmp(&svd.singular_values[p]));
    let cols: Vec<Vec<f64>> = order[..i.dim]
        .iter()
        .map(|&k| u.column(k).iter().copied().collect())
        .collect();
    Ok(Plane::from_columns(&cols, m))
}

fn triple_index(j: &Stratum, i: &Stratum, x: &[f64]) -> u64 {
    let key = format!("{}|{}|{:?}", j.id, i.id, x);
    rng::derive(0, &key, 0)
}

/// Samples `V_j` on the shells around `x` and evaluates both Kuo maps.
pub fn approach(j: &Stratum, i: &Stratum, x: &[f64], params: &Params) -> Result<Approach, WhitneyError> {
    let m = j.ambient_dim();
    if i.ambient_dim() != m || x.len() != m {
        return Err(WhitneyError::DimensionMismatch(m, i.ambient_dim()));
    }
    if i.membership(x, params)? == Membership::Outside {
        return Err(WhitneyError::NotOnSmallStratum(i.id.clone()));
    }
    let small = small_tangent(i, x, params)?;
    let frame = KuoFrame::new(x.to_vec(), small.clone());
    let radii = params.radii();
    let seed = rng::derive(params.seed, "triple", triple_index(j, i, x));
    let shells = sample_shells_with(
        j,
        x,
        &radii,
        params.probes_per_shell,
        None,
        params.weighted_probes,
        seed,
        params,
    )?;
    let mut entries = Vec::new();
    for (k, shell) in shells.shells.iter().enumerate() {
        for s in shell {
            let pa = kuo_a_plane(&frame, &s.tangent);
            let (pb, degenerate) = kuo_value(&frame, &s.tangent, &s.offset, Mode::B, params.tol_on);
            entries.push(TraceEntry {
                shell: k,
                radius: radii[k],
                offset: s.offset.clone(),
                point: linalg::add(x, &s.offset),
                tangent: s.tangent.clone(),
                pa,
                pb,
                degenerate,
            });
        }
    }
    let trace = KuoTrace { radii, entries };
    let deep_start = params.n_shells / 2;
    if !trace.entries.iter().any(|e| e.shell >= deep_start) {
        return Err(WhitneyError::NotInFrontier(j.id.clone()));
    }
    let (labels, essential) = label_components(j, &frame, &trace, params)?;
    Ok(Approach {
        frame,
        trace,
        labels,
        essential,
    })
}

/// Labels trace entries by local component, using an evenly spread subset
/// of each shell for the sample graph and attaching the rest to the
/// nearest labeled sample of the same shell.
fn label_components(
    j: &Stratum,
    frame: &KuoFrame,
    trace: &KuoTrace,
    params: &Params,
) -> Result<(Vec<Option<usize>>, Vec<bool>), WhitneyError> {
    const PER_SHELL: usize = 16;
    let n_shells = trace.radii.len();
    let mut chosen = Vec::new();
    for k in 0..n_shells {
        let idx: Vec<usize> = (0..trace.entries.len())
            .filter(|&e| trace.entries[e].shell == k)
            .collect();
        let step = idx.len().div_ceil(PER_SHELL).max(1);
        chosen.extend(idx.into_iter().step_by(step));
    }
    let offsets: Vec<Vec<f64>> = chosen.iter().map(|&e| trace.entries[e].offset.clone()).collect();
    let chart = Chart::new(j, &frame.base)?;
    let max_step = trace.radii.first().copied().unwrap_or(1.0) / 20.0;
    let sub = component_labels(&chart, &frame.small, &offsets, max_step, params);
    let count = sub.iter().flatten().max().map_or(0, |c| c + 1);
    let mut labels = vec![None; trace.entries.len()];
    for (&e, l) in chosen.iter().zip(&sub) {
        labels[e] = *l;
    }
    #[allow(clippy::needless_range_loop)]
    for e in 0..trace.entries.len() {
        if labels[e].is_some() || chosen.contains(&e) {
            continue;
        }
        let me = &trace.entries[e];
        let near = chosen
            .iter()
            .zip(&sub)
            .filter(|(&c, l)| l.is_some() && trace.entries[c].shell == me.shell)
            .min_by(|(&a, _), (&b, _)| {
                linalg::dist(&trace.entries[a].offset, &me.offset)
                    .total_cmp(&linalg::dist(&trace.entries[b].offset, &me.offset))
            });
        if let Some((&c, l)) = near {
            if linalg::dist(&trace.entries[c].offset, &me.offset) <= 0.5 * me.radius {
                labels[e] = *l;
            }
        }
    }
    let essential = (0..count)
        .map(|c| {
            let members: Vec<Vec<f64>> = (0..trace.entries.len())
                .filter(|&e| labels[e] == Some(c))
                .map(|e| trace.entries[e].offset.clone())
                .collect();
            is_essential(&frame.small, &members)
        })
        .collect();
    Ok((labels, essential))
}

/// `|pi_tau(v)|^2` maximized over unit `v` in the small plane, i.e. the
/// squared largest normal component of `T_x V_i` with respect to `tau`.
pub fn containment_defect(small: &Plane, tau: &Plane) -> f64 {
    let s = small.dim();
    if s == 0 {
        return 0.0;
    }
    let m = small.ambient_dim();
    let cols: Vec<Vec<f64>> = (0..s).map(|t| normal_part(tau, &small.basis_vector(t))).collect();
    let n = DMatrix::from_fn(m, s, |r, c| cols[c][r]);
    let top = n.singular_values().max();
    top * top
}

/// Secants from a sample `y = x + u` to points of `V_i`: the base point,
/// the foot of `y` on `T_x V_i`, and the slow points `x +- |u|^{1/2} e_t`.
fn secants(frame: &KuoFrame, u: &[f64]) -> Vec<(Vec<f64>, Detector)> {
    let mut out = Vec::new();
    let unit = |v: Vec<f64>| {
        let n = linalg::norm(&v);
        (n > 0.0).then(|| linalg::scale(&v, 1.0 / n))
    };
    if let Some(v) = unit(u.to_vec()) {
        out.push((v, Detector::Direct));
    }
    let w = frame.pi_normal(u);
    if linalg::norm(&w) > 0.0 {
        out.push((unit(w).unwrap(), Detector::Direct));
    }
    let slow = linalg::norm(u).sqrt();
    for t in 0..frame.s() {
        let e = frame.small.basis_vector(t);
        for sign in [1.0, -1.0] {
            if let Some(v) = unit(linalg::sub(u, &linalg::scale(&e, sign * slow))) {
                out.push((v, Detector::SlowSequence));
            }
        }
    }
    out
}

/// Largest squared normal component of the secants at one sample.
fn secant_defect(frame: &KuoFrame, e: &TraceEntry) -> (f64, Option<(Vec<f64>, Detector)>) {
    let mut best = (0.0, None);
    for (v, d) in secants(frame, &e.offset) {
        let n = normal_part(&e.tangent, &v);
        let val = linalg::dot(&n, &n);
        if val > best.0 {
            best = (val, Some((v, d)));
        }
    }
    best
}

/// Cluster representatives (deepest-shell medians) of per-entry values.
fn scalar_limits(trace: &KuoTrace, values: &[(usize, f64)], tol: f64) -> Vec<f64> {
    cluster_values(values, tol)
        .into_iter()
        .map(|g| {
            let deepest = g.iter().map(|&(i, _)| trace.entries[i].shell).max().unwrap_or(0);
            let mut deep: Vec<f64> = g
                .iter()
                .filter(|&&(i, _)| trace.entries[i].shell == deepest)
                .map(|&(_, v)| v)
                .collect();
            median(&mut deep)
        })
        .collect()
}

fn limit_status(limits: &[f64], populated: usize, params: &Params) -> Status {
    if limits.iter().any(|&v| v > params.tol_kuo) {
        Status::Irregular
    } else if populated >= params.min_shells && !limits.is_empty() {
        Status::Regular
    } else {
        Status::Inconclusive
    }
}

fn kuo_limits(ap: &Approach, mode: Mode, entries: Option<&[usize]>, params: &Params) -> Vec<f64> {
    let tail = ap.trace.tail_indices();
    let values: Vec<(usize, f64)> = tail
        .into_iter()
        .filter(|i| entries.is_none_or(|keep| keep.contains(i)))
        .filter_map(|i| {
            let e = &ap.trace.entries[i];
            match mode {
                Mode::A => Some((i, e.pa)),
                Mode::B => (!e.degenerate).then_some((i, e.pb)),
            }
        })
        .collect();
    scalar_limits(&ap.trace, &values, params.cluster_tol_scalar)
}

/// Picks the witness: the largest Kuo value above `tol_kuo` in the deepest
/// tail shell that has one.
fn kuo_witness(ap: &Approach, mode: Mode, limits: &[f64], params: &Params) -> Option<Witness> {
    let tail = ap.trace.tail_indices();
    let value = |e: &TraceEntry| match mode {
        Mode::A => e.pa,
        Mode::B => e.pb,
    };
    let candidates: Vec<usize> = tail
        .into_iter()
        .filter(|&i| value(&ap.trace.entries[i]) > params.tol_kuo)
        .collect();
    let deepest = candidates.iter().map(|&i| ap.trace.entries[i].shell).max()?;
    let best = candidates
        .into_iter()
        .filter(|&i| ap.trace.entries[i].shell == deepest)
        .max_by(|&a, &b| value(&ap.trace.entries[a]).total_cmp(&value(&ap.trace.entries[b])))?;
    let e = &ap.trace.entries[best];
    let v = value(e);
    let limit = limits
        .iter()
        .copied()
        .filter(|&l| l > params.tol_kuo)
        .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
        .unwrap_or(v);
    let secant = match mode {
        Mode::A => None,
        Mode::B => secant_defect(&ap.frame, e).1.map(|(v, _)| v),
    };
    Some(Witness {
        mode,
        detector: Detector::Kuo,
        shell: e.shell,
        radius: e.radius,
        point: e.point.clone(),
        offset: e.offset.clone(),
        tangent: e.tangent.clone(),
        value: v,
        limit,
        secant,
    })
}

fn combine(kuo: Status, direct: Status) -> (Status, Option<String>) {
    if kuo == direct {
        (kuo, None)
    } else {
        (
            Status::Inconclusive,
            Some(format!(
                "detectors disagree: kuo {}, direct {}",
                kuo.as_str(),
                direct.as_str()
            )),
        )
    }
}

/// Condition (a) on an already sampled approach.
pub fn evaluate_a(ap: &Approach, params: &Params) -> ConditionCheck {
    let populated = ap.trace.populated_shells().len();
    if ap.frame.s() == 0 {
        return ConditionCheck {
            mode: Mode::A,
            status: Status::Regular,
            kuo_status: Status::Regular,
            direct_status: Status::Regular,
            kuo_limits: vec![0.0],
            direct_limits: vec![0.0],
            witness: None,
            note: Some("s=0: the small stratum is a point, condition (a) is empty".into()),
        };
    }
    let kuo = kuo_limits(ap, Mode::A, None, params);
    let kuo_status = limit_status(&kuo, populated, params);
    let direct: Vec<f64> = match limit_points(&ap.trace, LimitKind::Planes, params.cluster_tol_plane) {
        Ok(clusters) => clusters
            .iter()
            .filter_map(|c| c.plane().map(|tau| containment_defect(&ap.frame.small, tau)))
            .collect(),
        Err(_) => Vec::new(),
    };
    let direct_status = limit_status(&direct, populated, params);
    let (status, note) = combine(kuo_status, direct_status);
    let witness = (status == Status::Irregular)
        .then(|| kuo_witness(ap, Mode::A, &kuo, params))
        .flatten();
    ConditionCheck {
        mode: Mode::A,
        status,
        kuo_status,
        direct_status,
        kuo_limits: kuo,
        direct_limits: direct,
        witness,
        note,
    }
}

/// Condition (b) on an already sampled approach.
pub fn evaluate_b(ap: &Approach, params: &Params) -> ConditionCheck {
    let populated = ap.trace.populated_shells().len();
    let mut kuo = kuo_limits(ap, Mode::B, None, params);
    let mut note = None;
    if kuo.is_empty() {
        // Every tail secant was tangent to V_i; P^b falls back to P^a.
        kuo = kuo_limits(ap, Mode::A, None, params);
        note = Some("all tail secants degenerate; P^b evaluated as P^a".to_string());
    }
    let kuo_status = limit_status(&kuo, populated, params);
    let defects: Vec<(usize, f64)> = ap
        .trace
        .tail_indices()
        .into_iter()
        .map(|i| (i, secant_defect(&ap.frame, &ap.trace.entries[i]).0))
        .collect();
    let direct = scalar_limits(&ap.trace, &defects, params.cluster_tol_scalar);
    let direct_status = limit_status(&direct, populated, params);
    let (status, disagreement) = combine(kuo_status, direct_status);
    let witness = (status == Status::Irregular)
        .then(|| kuo_witness(ap, Mode::B, &kuo, params))
        .flatten();
    ConditionCheck {
        mode: Mode::B,
        status,
        kuo_status,
        direct_status,
        kuo_limits: kuo,
        direct_limits: direct,
        witness,
        note: disagreement.or(note),
    }
}

fn essential_status(ap: &Approach, mode: Mode, params: &Params) -> Status {
    let keep: Vec<usize> = (0..ap.trace.entries.len())
        .filter(|&e| ap.labels[e].is_some_and(|c| ap.essential[c]))
        .collect();
    if keep.is_empty() {
        // No essential component: the restricted condition is vacuous.
        return Status::Regular;
    }
    if mode == Mode::A && ap.frame.s() == 0 {
        return Status::Regular;
    }
    let populated = {
        let mut shells: Vec<usize> = keep.iter().map(|&e| ap.trace.entries[e].shell).collect();
        shells.dedup();
        shells.len()
    };
    limit_status(&kuo_limits(ap, mode, Some(&keep), params), populated, params)
}

pub fn check_condition_a(j: &Stratum, i: &Stratum, x: &[f64], params: &Params) -> Result<ConditionCheck, WhitneyError> {
    Ok(evaluate_a(&approach(j, i, x, params)?, params))
}

pub fn check_condition_b(j: &Stratum, i: &Stratum, x: &[f64], params: &Params) -> Result<ConditionCheck, WhitneyError> {
    let ap = approach(j, i, x, params)?;
    let a = evaluate_a(&ap, params);
    Ok(enforce_inclusion(&a, evaluate_b(&ap, params)))
}

/// An (a)-irregular triple is (b)-irregular: the slow sequence through the
/// (a)-witness gives secants tending to a vector of `T_x V_i` outside the
/// limit plane. The (a)-witness is reused for (b) when the (b) detectors
/// did not already decide so.
fn enforce_inclusion(a: &ConditionCheck, mut b: ConditionCheck) -> ConditionCheck {
    if a.status == Status::Irregular && b.status != Status::Irregular {
        b.status = Status::Irregular;
        b.witness = a.witness.clone().map(|w| Witness {
            mode: Mode::B,
            detector: Detector::SlowSequence,
            ..w
        });
        b.note = Some(match b.note.take() {
            Some(n) => format!("(a)-irregular, hence (b)-irregular; {n}"),
            None => "(a)-irregular, hence (b)-irregular".to_string(),
        });
    }
    b
}

pub fn classify_approach(j: &Stratum, i: &Stratum, ap: &Approach, params: &Params) -> TripleVerdict {
    let a = evaluate_a(ap, params);
    let b = enforce_inclusion(&a, evaluate_b(ap, params));
    let mut essential_a = essential_status(ap, Mode::A, params);
    let mut essential_b = essential_status(ap, Mode::B, params);
    if essential_a == Status::Irregular {
        essential_b = Status::Irregular;
    }
    if ap.frame.s() == 0 {
        essential_a = Status::Regular;
    }
    let tail = ap.trace.tail_indices();
    let plane_clusters = limit_points(&ap.trace, LimitKind::Planes, params.cluster_tol_plane)
        .map(|c| c.len())
        .unwrap_or(0);
    TripleVerdict {
        big: j.id.clone(),
        small: i.id.clone(),
        x: ap.frame.base.clone(),
        a,
        b,
        essential_a,
        essential_b,
        diagnostics: Diagnostics {
            n_shells: ap.trace.radii.len(),
            populated_shells: ap.trace.populated_shells().len(),
            samples: ap.trace.entries.len(),
            tail_samples: tail.len(),
            degenerate_secants: ap.trace.entries.iter().filter(|e| e.degenerate).count(),
            plane_clusters,
            components: ap.essential.len(),
            essential_components: ap.essential.iter().filter(|&&e| e).count(),
        },
    }
}

/// Both conditions for one triple, over all local components of `V_j`.
pub fn classify_triple(j: &Stratum, i: &Stratum, x: &[f64], params: &Params) -> Result<TripleVerdict, WhitneyError> {
    let ap = approach(j, i, x, params)?;
    Ok(classify_approach(j, i, &ap, params))
}

/// Base points for [`probe_sing`].
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Points(Vec<Vec<f64>>),
    /// `n` evenly spaced points from `from` to `to`.
    Segment {
        from: Vec<f64>,
        to: Vec<f64>,
        n: usize,
    },
    /// `origin + sum_k (c_k / (n_k - 1)) axes[k]` for `c_k < n_k`.
    Lattice {
        origin: Vec<f64>,
        axes: Vec<Vec<f64>>,
        counts: Vec<usize>,
    },
}

impl GridSpec {
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            GridSpec::Points(p) => p.clone(),
            GridSpec::Segment { from, to, n } => GridSpec::Lattice {
                origin: from.clone(),
                axes: vec![linalg::sub(to, from)],
                counts: vec![*n],
            }
            .points(),
            GridSpec::Lattice { origin, axes, counts } => {
                let total: usize = counts.iter().product();
                (0..total)
                    .map(|flat| {
                        let mut p = origin.clone();
                        for (k, c) in lattice_coords(flat, counts).into_iter().enumerate() {
                            let t = if counts[k] > 1 {
                                c as f64 / (counts[k] - 1) as f64
                            } else {
                                0.0
                            };
                            p = linalg::add(&p, &linalg::scale(&axes[k], t));
                        }
                        p
                    })
                    .collect()
            }
        }
    }

    /// Grid cells as lists of point indices; plain point lists have none.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let counts = match self {
            GridSpec::Points(_) => return Vec::new(),
            GridSpec::Segment { n, .. } => vec![*n],
            GridSpec::Lattice { counts, .. } => counts.clone(),
        };
        let d = counts.len();
        let total: usize = counts.iter().product();
        let mut cells = Vec::new();
        for flat in 0..total {
            let c = lattice_coords(flat, &counts);
            if c.iter().zip(&counts).any(|(ci, n)| ci + 1 >= *n) {
                continue;
            }
            let corners = (0..1usize << d)
                .map(|bits| {
                    let cc: Vec<usize> = (0..d).map(|k| c[k] + ((bits >> k) & 1)).collect();
                    lattice_flat(&cc, &counts)
                })
                .collect();
            cells.push(corners);
        }
        cells
    }
}

fn lattice_coords(mut flat: usize, counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .map(|&n| {
            let c = flat % n;
            flat /= n;
            c
        })
        .collect()
}

fn lattice_flat(c: &[usize], counts: &[usize]) -> usize {
    c.iter()
        .rev()
        .zip(counts.iter().rev())
        .fold(0, |acc, (ci, n)| acc * n + ci)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeEntry {
    pub x: Vec<f64>,
    pub verdict: Option<TripleVerdict>,
    /// Why no verdict was produced (for example, the point is not in the
    /// frontier of the big stratum).
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingProbe {
    pub big: String,
    pub small: String,
    pub entries: Vec<ProbeEntry>,
    pub irregular_fraction_a: f64,
    pub irregular_fraction_b: f64,
    /// Irregular points fill no full grid cell (and, over a point stratum,
    /// do not occur at all).
    pub codim_ok_a: bool,
    pub codim_ok_b: bool,
}

impl SingProbe {
    pub fn irregular_points(&self, mode: Mode) -> Vec<&ProbeEntry> {
        self.entries
            .iter()
            .filter(|e| e.verdict.as_ref().is_some_and(|v| v.status(mode) == Status::Irregular))
            .collect()
    }

    pub fn inconclusive(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| {
                e.verdict
                    .as_ref()
                    .is_some_and(|v| v.a.status == Status::Inconclusive || v.b.status == Status::Inconclusive)
            })
            .count()
    }
}

/// Classifies every grid point of `V_i`; points outside the frontier of
/// `V_j` are recorded with their error rather than failing the probe.
pub fn probe_sing(j: &Stratum, i: &Stratum, grid: &GridSpec, params: &Params) -> Result<SingProbe, WhitneyError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(WhitneyError::EmptyGrid);
    }
    let entries: Vec<ProbeEntry> = exec::par_map(&points, params.parallel, |_, x| {
        match classify_triple(j, i, x, params) {
            Ok(v) => ProbeEntry {
                x: x.clone(),
                verdict: Some(v),
                error: None,
            },
            Err(e) => ProbeEntry {
                x: x.clone(),
                verdict: None,
                error: Some(e.to_string()),
            },
        }
    });
    let irregular = |mode: Mode| -> Vec<bool> {
        entries
            .iter()
            .map(|e| e.verdict.as_ref().is_some_and(|v| v.status(mode) == Status::Irregular))
            .collect()
    };
    let cells = grid.cells();
    let codim_ok = |flags: &[bool]| {
        if i.dim == 0 {
            return !flags.iter().any(|&f| f);
        }
        if cells.is_empty() {
            return flags.len() < 2 || !flags.iter().all(|&f| f);
        }
        !cells.iter().any(|c| c.iter().all(|&p| flags[p]))
    };
    let (fa, fb) = (irregular(Mode::A), irregular(Mode::B));
    let n = entries.len() as f64;
    Ok(SingProbe {
        big: j.id.clone(),
        small: i.id.clone(),
        irregular_fraction_a: fa.iter().filter(|&&f| f).count() as f64 / n,
        irregular_fraction_b: fb.iter().filter(|&&f| f).count() as f64 / n,
        codim_ok_a: codim_ok(&fa),
        codim_ok_b: codim_ok(&fb),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polycore::parse_poly;
    use crate::semivariety::Semivariety;

    fn set(vars: &[&str], eqs: &[&str]) -> Semivariety {
        let v: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        Semivariety::from_equations(eqs.iter().map(|e| parse_poly(e, &v).unwrap()).collect(), 3).unwrap()
    }

    fn xyz(eqs: &[&str]) -> Semivariety {
        set(&["x", "y", "z"], eqs)
    }

    #[test]
    fn plane_over_line_is_regular() {
        let mut j = Stratum::new("plane", 2, xyz(&["z"]));
        j.exclusions = vec![xyz(&["y", "z"])];
        let i = Stratum::new("line", 1, xyz(&["y", "z"]));
        let p = Params::default();
        let v = classify_triple(&j, &i, &[0.0; 3], &p).unwrap();
        assert_eq!(v.a.status, Status::Regular);
        assert_eq!(v.b.status, Status::Regular);
        assert!(v.b.kuo_limits.iter().all(|&l| l <= 1e-12));
        assert_eq!(v.diagnostics.essential_components, 2);
    }

    #[test]
    fn cone_over_vertex_is_vacuous_for_a() {
        let mut j = Stratum::new("cone", 2, xyz(&["x^2 + y^2 - z^2"]));
        j.exclusions = vec![xyz(&["x", "y", "z"])];
        let i = Stratum::new("vertex", 0, xyz(&["x", "y", "z"]));
        let v = classify_triple(&j, &i, &[0.0; 3], &Params::default()).unwrap();
        assert_eq!(v.a.status, Status::Regular);
        assert!(v.a.note.as_deref().unwrap().contains("s=0"));
        assert_eq!(v.b.status, Status::Regular);
    }

    #[test]
    fn non_frontier_point_is_an_error() {
        let mut j = Stratum::new("umbrella", 2, xyz(&["x^2 - z*y^2"]));
        j.exclusions = vec![xyz(&["x", "y"])];
        let i = Stratum::new("axis", 1, xyz(&["x", "y"]));
        let e = classify_triple(&j, &i, &[0.0, 0.0, -1.0], &Params::default()).unwrap_err();
        assert!(matches!(e, WhitneyError::NotInFrontier(_)));
    }

    #[test]
    fn off_stratum_point_is_an_error() {
        let j = Stratum::new("plane", 2, xyz(&["z"]));
        let i = Stratum::new("line", 1, xyz(&["y", "z"]));
        let e = classify_triple(&j, &i, &[0.0, 1.0, 0.0], &Params::default()).unwrap_err();
        assert!(matches!(e, WhitneyError::NotOnSmallStratum(_)));
    }

    #[test]
    fn containment_defect_of_axes() {
        let small = Plane::coordinate(3, &[2]);
        assert!(containment_defect(&small, &Plane::coordinate(3, &[0, 2])) < 1e-30);
        assert!((containment_defect(&small, &Plane::coordinate(3, &[0, 1])) - 1.0).abs() < 1e-15);
        assert_eq!(containment_defect(&Plane::zero(3), &Plane::coordinate(3, &[0])), 0.0);
    }

    #[test]
    fn grid_cells() {
        let g = GridSpec::Segment {
            from: vec![0.0, 0.0, -1.0],
            to: vec![0.0, 0.0, 1.0],
            n: 5,
        };
        assert_eq!(g.points().len(), 5);
        assert_eq!(g.points()[2], vec![0.0, 0.0, 0.0]);
        assert_eq!(g.cells(), vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 4]]);
        let l = GridSpec::Lattice {
            origin: vec![0.0; 2],
            axes: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            counts: vec![3, 2],
        };
        assert_eq!(l.points().len(), 6);
        assert_eq!(l.cells(), vec![vec![0, 1, 3, 4], vec![1, 2, 4, 5]]);
    }
}
