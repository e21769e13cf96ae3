//! Refinement of strata at irregular points and the stratification driver.
//!
//! At an irregular base point there are two ways to cut the big stratum.
//! If the Kuo map has several limits, level sets at regular values between
//! them give new strata (numbered `^+p`). If it has a single limit but the
//! tangent planes have several limits, a plane separating two of them has a
//! critical locus running into the point (numbered `^-p`).

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::grassmann::{
    orientation_det, random_separating_plane, rolle_scan, transport_orientation, GrassError, OrientedPlane, Plane,
    TangentSample,
};
use crate::kuo::{kuo_value, limit_points, KuoFrame, LimitKind, Mode};
use crate::linalg;
use crate::params::Params;
use crate::polycore::{
    default_var_names, jacobian, minors, parse_poly, rational_rounded, PolyError, Polynomial, Rational,
};
use crate::rng;
use crate::semivariety::{
    filtrate, is_essential, sample_global, sample_shells_with, vote_dim, BasicSet, Chart, Filtration, LevelConstraint,
    LocalSample, Membership, SemiError, Semivariety, Stratum,
};
use crate::whitney::{
    approach, classify_triple, evaluate_a, evaluate_b, small_tangent, SingProbe, Status, TripleVerdict, WhitneyError,
    Witness,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("no valid regular level among {0} candidates")]
    NoValidLevels(usize),
    #[error("no sampled pair straddles the level {0}")]
    NoStraddlingPairs(f64),
    #[error("plane is not transversal to {0} at any sampled point")]
    NotTransversal(String),
    #[error("probe has no {0}-irregular point")]
    NoIrregularPoints(&'static str),
    #[error("neither case applies (single Kuo limit and single limit plane) at {0:?}")]
    Anomaly(Vec<Vec<f64>>),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Whitney(#[from] WhitneyError),
    #[error(transparent)]
    Semi(#[from] SemiError),
    #[error(transparent)]
    Grass(#[from] GrassError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Where level-set searches take their samples of the big stratum.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    /// Shell samples around the frame's base point.
    Shells,
    /// Global samples seeded in the box `[-radius, radius]^m`.
    Global { n: usize, radius: f64 },
    /// Given points, projected onto the stratum.
    Points(Vec<Vec<f64>>),
}

/// A level set `{P = level}` of a Kuo map on a parent stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStratum {
    pub stratum: Stratum,
    pub parent: String,
    pub mode: Mode,
    pub level: f64,
    pub points: Vec<Vec<f64>>,
    /// `|P(y) - level|` at each point.
    pub residuals: Vec<f64>,
}

/// Points of the parent where the projection along `plane` drops rank.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalStratum {
    pub stratum: Stratum,
    pub parent: String,
    pub plane: OrientedPlane,
    pub points: Vec<Vec<f64>>,
    /// Parent equations plus maximal minors, when the parent is polynomial.
    pub defining_system: Option<Semivariety>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NewStratum {
    Level(LevelStratum),
    Critical(CriticalStratum),
}

impl NewStratum {
    pub fn stratum(&self) -> &Stratum {
        match self {
            NewStratum::Level(l) => &l.stratum,
            NewStratum::Critical(c) => &c.stratum,
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        match self {
            NewStratum::Level(l) => &l.points,
            NewStratum::Critical(c) => &c.points,
        }
    }

    pub fn summary(&self) -> NewStratumSummary {
        let s = self.stratum();
        let (kind, parent, level) = match self {
            NewStratum::Level(l) => ("level", l.parent.clone(), Some(l.level)),
            NewStratum::Critical(c) => ("critical", c.parent.clone(), None),
        };
        NewStratumSummary {
            id: s.id.clone(),
            kind: kind.to_string(),
            parent,
            dim: s.dim,
            level,
            points: self.points().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewStratumSummary {
    pub id: String,
    pub kind: String,
    pub parent: String,
    pub dim: usize,
    pub level: Option<f64>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineCase {
    /// Several Kuo limits: level strata.
    Levels,
    /// One Kuo limit, several limit planes: critical locus.
    Critical,
    /// Neither; the data is kept for inspection.
    Anomaly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub x: Vec<f64>,
    pub case: RefineCase,
    pub kuo_limits: Vec<f64>,
    pub plane_clusters: usize,
    pub levels: Vec<f64>,
    pub rolle_index: Option<usize>,
    pub note: Option<String>,
}

/// Irregular points of the small stratum that lie on the boundary of the
/// closure of a new stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSet {
    pub small: String,
    pub source: String,
    pub points: Vec<Vec<f64>>,
}

/// Restriction monotonicity: `P` with the new stratum's tangent minus `P`
/// with the parent tangent, at new-stratum points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub checked: usize,
    /// Largest `P_parent - P_sub` seen (negative or tiny when it holds).
    pub max_deficit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRefinement {
    pub big: String,
    pub small: String,
    pub mode: Mode,
    pub strata: Vec<NewStratum>,
    pub frontier: Vec<FrontierSet>,
    pub cases: Vec<CaseReport>,
    pub monotonicity: Monotonicity,
    /// Per irregular point: it lies near a new stratum or in a frontier set.
    pub contained: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementSummary {
    pub big: String,
    pub small: String,
    pub mode: Mode,
    pub strata: Vec<NewStratumSummary>,
    pub frontier: Vec<FrontierSet>,
    pub cases: Vec<CaseReport>,
    pub monotonicity: Monotonicity,
    pub contained: Vec<bool>,
}

impl PairRefinement {
    pub fn summary(&self) -> RefinementSummary {
        RefinementSummary {
            big: self.big.clone(),
            small: self.small.clone(),
            mode: self.mode,
            strata: self.strata.iter().map(NewStratum::summary).collect(),
            frontier: self.frontier.clone(),
            cases: self.cases.clone(),
            monotonicity: self.monotonicity,
            contained: self.contained.clone(),
        }
    }
}

/// Samples of a stratum in a chart at the frame's base point, with their
/// Kuo values.
struct LevelSearch<'a> {
    chart: Chart<'a>,
    frame: KuoFrame,
    mode: Mode,
    samples: Vec<(LocalSample, f64)>,
}

const MAX_LEVEL_SAMPLES_PER_SHELL: usize = 20;

/// Level-set points collected with a cap per octave of `|u|`.
struct Hits {
    out: Vec<(LocalSample, f64)>,
    buckets: std::collections::BTreeMap<i64, usize>,
    max_points: usize,
    per_bucket: usize,
}

impl Hits {
    fn bucket(u: &[f64]) -> i64 {
        linalg::norm(u).max(1e-300).log2().floor() as i64
    }

    fn done(&self) -> bool {
        self.out.len() >= self.max_points
    }

    fn full(&self, u: &[f64]) -> bool {
        self.buckets.get(&Hits::bucket(u)).copied().unwrap_or(0) >= self.per_bucket
    }

    fn keep(&mut self, hit: (LocalSample, f64)) {
        let u = &hit.0.offset;
        if self.done()
            || self.full(u)
            || self
                .out
                .iter()
                .any(|(s, _)| linalg::dist(&s.offset, u) <= 1e-9 * linalg::norm(u))
        {
            return;
        }
        *self.buckets.entry(Hits::bucket(u)).or_default() += 1;
        self.out.push(hit);
    }
}
const LEVEL_POINTS: usize = 12;
const MIN_VALIDATION_POINTS: usize = 10;

impl<'a> LevelSearch<'a> {
    fn new(
        j: &'a Stratum,
        frame: &KuoFrame,
        mode: Mode,
        source: &SampleSource,
        seed: u64,
        params: &Params,
    ) -> Result<LevelSearch<'a>, RefineError> {
        let chart = Chart::new(j, &frame.base)?;
        let mut found: Vec<LocalSample> = Vec::new();
        match source {
            SampleSource::Shells => {
                let shells = sample_shells_with(
                    j,
                    &frame.base,
                    &params.radii(),
                    params.probes_per_shell,
                    None,
                    params.weighted_probes,
                    seed,
                    params,
                )?;
                for shell in shells.shells {
                    let step = shell.len().div_ceil(MAX_LEVEL_SAMPLES_PER_SHELL).max(1);
                    found.extend(shell.into_iter().step_by(step));
                }
            }
            SampleSource::Global { n, radius } => {
                let mut p = params.clone();
                p.box_radius = *radius;
                let codim = j.ambient_dim() - j.dim;
                let global = sample_global(&j.carrier, *n, seed, "level-global", codim..=codim, &p);
                let points: Vec<Vec<f64>> = global.into_iter().map(|g| g.point).collect();
                found = project_points(&chart, &points, params);
            }
            SampleSource::Points(points) => found = project_points(&chart, points, params),
        }
        let samples = found
            .into_iter()
            .map(|s| {
                let p = value_at(&chart, frame, mode, &s, params);
                (s, p)
            })
            .collect();
        Ok(LevelSearch {
            chart,
            frame: frame.clone(),
            mode,
            samples,
        })
    }

    fn project(&self, piece: usize, u: &[f64], max_step: f64, params: &Params) -> Option<LocalSample> {
        self.chart.project(piece, u, Some(max_step), params)
    }

    fn value(&self, s: &LocalSample, params: &Params) -> f64 {
        value_at(&self.chart, &self.frame, self.mode, s, params)
    }

    /// Points of `{P = level}`: bisection along projected chords between
    /// nearby samples that straddle the level, then Newton marches from the
    /// samples with the closest values, and finally each hit is traced along
    /// the level set toward the base. At most `per_bucket` points come from
    /// each octave of distance to the base.
    fn crossings(&self, level: f64, max_points: usize, per_bucket: usize, params: &Params) -> Vec<(LocalSample, f64)> {
        const NEIGHBORS: usize = 6;
        const MARCH_ATTEMPTS: usize = 16;
        let n = self.samples.len();
        let norm_of = |a: usize| linalg::norm(&self.samples[a].0.offset);
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for a in 0..n {
            let (sa, pa) = &self.samples[a];
            if *pa >= level {
                continue;
            }
            let mut near: Vec<(f64, usize)> = (0..n)
                .filter(|&b| self.samples[b].1 > level)
                .map(|b| (linalg::dist(&sa.offset, &self.samples[b].0.offset), b))
                .collect();
            near.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            for &(d, b) in near.iter().take(NEIGHBORS) {
                let (na, nb) = (norm_of(a), norm_of(b));
                if d <= na.min(nb) && na.max(nb) <= 2.0 * na.min(nb) {
                    pairs.push((a, b, d));
                }
            }
        }
        // Deeper pairs first so that the level set is traced toward the base.
        pairs.sort_by(|x, y| {
            norm_of(x.0)
                .total_cmp(&norm_of(y.0))
                .then(x.0.cmp(&y.0))
                .then(x.1.cmp(&y.1))
        });
        let mut hits = Hits {
            out: Vec::new(),
            buckets: Default::default(),
            max_points,
            per_bucket,
        };
        for (a, b, d) in pairs {
            if hits.done() {
                return hits.out;
            }
            if hits.full(&self.samples[a].0.offset) {
                continue;
            }
            if let Some(hit) = self.bisect(a, b, d, level, params) {
                hits.keep(hit);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| {
            let (dx, dy) = ((self.samples[x].1 - level).abs(), (self.samples[y].1 - level).abs());
            dx.total_cmp(&dy).then(x.cmp(&y))
        });
        let mut attempts = 0;
        for a in order {
            if hits.done() || attempts >= MARCH_ATTEMPTS {
                break;
            }
            if hits.full(&self.samples[a].0.offset) {
                continue;
            }
            attempts += 1;
            if let Some(hit) = self.march(&self.samples[a].0, level, params) {
                hits.keep(hit);
            }
        }
        let floor = params.radii().last().copied().unwrap_or(0.0);
        let starts: Vec<LocalSample> = hits.out.iter().map(|(s, _)| s.clone()).collect();
        for start in starts {
            let mut cur = start;
            while !hits.done() && linalg::norm(&cur.offset) > floor {
                match self.descend(&cur, level, params) {
                    Some(next) => {
                        cur = next.0.clone();
                        hits.keep(next);
                    }
                    None => break,
                }
            }
        }
        hits.out
    }

    /// One step along the level set through `s` toward the base: a move
    /// inside the tangent plane, orthogonal to the gradient of `P`, followed
    /// by a march back onto the level. The step starts at a quarter of `|u|`
    /// and shrinks until it lands, since near a fold the stratum bends on
    /// scales far below `|u|`.
    fn descend(&self, s: &LocalSample, level: f64, params: &Params) -> Option<(LocalSample, f64)> {
        let r = linalg::norm(&s.offset);
        let g = self.tangent_gradient(s, params)?;
        let gn = linalg::norm(&g);
        let mut d = s.tangent.project(&linalg::scale(&s.offset, -1.0));
        if gn > 0.0 {
            let gh = linalg::scale(&g, 1.0 / gn);
            d = linalg::sub(&d, &linalg::scale(&gh, linalg::dot(&d, &gh)));
        }
        let dn = linalg::norm(&d);
        if !(dn > 0.0) {
            return None;
        }
        [0.25, 0.05, 1e-2, 2e-3, 4e-4].into_iter().find_map(|frac| {
            let len = frac * r;
            let seed = linalg::add(&s.offset, &linalg::scale(&d, len / dn));
            let moved = self.project(s.piece, &seed, len, params)?;
            let hit = self.march(&moved, level, params)?;
            (linalg::norm(&hit.0.offset) <= r && linalg::dist(&hit.0.offset, &s.offset) > 1e-9 * r).then_some(hit)
        })
    }

    /// Newton iteration for `P = level` along the tangential gradient of
    /// `P`, staying within `|u|` of the starting sample.
    fn march(&self, start: &LocalSample, level: f64, params: &Params) -> Option<(LocalSample, f64)> {
        let r = linalg::norm(&start.offset);
        let mut cur = start.clone();
        for _ in 0..30 {
            let f = self.value(&cur, params) - level;
            if f.abs() <= params.tol_level {
                return Some((cur, f.abs()));
            }
            let g = self.tangent_gradient(&cur, params)?;
            let gg = linalg::dot(&g, &g);
            if !(gg > 0.0) {
                return None;
            }
            let mut step = linalg::scale(&g, -f / gg);
            let len = linalg::norm(&step);
            if len > 0.25 * r {
                step = linalg::scale(&step, 0.25 * r / len);
            }
            let next = self.project(
                cur.piece,
                &linalg::add(&cur.offset, &step),
                2.0 * len.min(0.25 * r),
                params,
            )?;
            if linalg::dist(&next.offset, &start.offset) > r {
                return None;
            }
            cur = next;
        }
        None
    }

    fn bisect(&self, a: usize, b: usize, d: f64, level: f64, params: &Params) -> Option<(LocalSample, f64)> {
        let (lo, plo) = &self.samples[a];
        let (hi, _) = &self.samples[b];
        let piece = lo.piece;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let mut best: Option<(LocalSample, f64)> = None;
        let mut below = *plo < level;
        for _ in 0..80 {
            let t = 0.5 * (t0 + t1);
            let seed = linalg::add(&lo.offset, &linalg::scale(&linalg::sub(&hi.offset, &lo.offset), t));
            let s = self.project(piece, &seed, d, params)?;
            let f = self.value(&s, params) - level;
            if f.abs() <= params.tol_level {
                return Some((s, f.abs()));
            }
            if best.as_ref().is_none_or(|(_, r)| f.abs() < *r) {
                best = Some((s, f.abs()));
            }
            if (f < 0.0) == below {
                t0 = t;
            } else {
                t1 = t;
            }
            below = *plo < level;
            if t1 - t0 < 1e-15 {
                break;
            }
        }
        best.filter(|(_, r)| *r <= params.tol_level)
    }

    /// Norm of the gradient of `P` along the stratum at a sample, by central
    /// differences in tangent directions.
    fn gradient_norm(&self, s: &LocalSample, params: &Params) -> Option<f64> {
        self.tangent_gradient(s, params).map(|g| linalg::norm(&g))
    }

    fn tangent_gradient(&self, s: &LocalSample, params: &Params) -> Option<Vec<f64>> {
        let base_offset = linalg::sub(&self.chart.origin, &self.frame.base);
        if self.chart.stratum.level.is_none() {
            let g = self.chart.kuo_extension_gradient(
                s.piece,
                &s.offset,
                &self.frame,
                &base_offset,
                self.mode,
                self.chart.stratum.dim,
                params.tol_rank,
            )?;
            return Some(s.tangent.project(&g));
        }
        let r = linalg::norm(&linalg::add(&base_offset, &s.offset));
        let h = 1e-5 * r.max(1e-12);
        let mut g = vec![0.0; s.offset.len()];
        for k in 0..s.tangent.dim() {
            let e = s.tangent.basis_vector(k);
            let up = self.project(s.piece, &linalg::add(&s.offset, &linalg::scale(&e, h)), 4.0 * h, params)?;
            let dn = self.project(s.piece, &linalg::sub(&s.offset, &linalg::scale(&e, h)), 4.0 * h, params)?;
            let d = (self.value(&up, params) - self.value(&dn, params)) / (2.0 * h);
            g = linalg::add(&g, &linalg::scale(&e, d));
        }
        Some(g)
    }

    fn validated(&self, level: f64, params: &Params) -> bool {
        let below = self.samples.iter().any(|(_, p)| *p < level);
        let above = self.samples.iter().any(|(_, p)| *p > level);
        if !(below && above) {
            return false;
        }
        let hits = self.crossings(level, LEVEL_POINTS, LEVEL_POINTS, params);
        hits.len() >= MIN_VALIDATION_POINTS
            && hits
                .iter()
                .all(|(s, _)| self.gradient_norm(s, params).is_some_and(|g| g > params.tol_grad))
    }

    fn levels(&self, n_levels: usize, params: &Params) -> Result<Vec<f64>, RefineError> {
        if n_levels == 0 {
            return Ok(Vec::new());
        }
        let top = match self.mode {
            Mode::A => self.frame.s() as f64,
            Mode::B => self.frame.s() as f64 + 1.0,
        };
        let n_candidates = 4 * n_levels + 16;
        let mut out = Vec::new();
        for k in 1..=n_candidates {
            let level = top * van_der_corput(k as u64);
            if self.validated(level, params) {
                out.push(level);
                if out.len() == n_levels {
                    break;
                }
            }
        }
        if out.is_empty() {
            return Err(RefineError::NoValidLevels(n_candidates));
        }
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    fn level_stratum(&self, j: &Stratum, level: f64, params: &Params) -> Result<LevelStratum, RefineError> {
        if j.level.is_some() {
            return Err(RefineError::Unsupported(format!(
                "{} is already a level stratum; nested level sets are not supported",
                j.id
            )));
        }
        let hits = self.crossings(level, 64, 4, params);
        if hits.is_empty() {
            return Err(RefineError::NoStraddlingPairs(level));
        }
        let mut stratum = Stratum::new(format!("{}^level", j.id), j.dim.saturating_sub(1), j.carrier.clone());
        stratum.exclusions = j.exclusions.clone();
        stratum.level = Some(LevelConstraint {
            base: self.frame.base.clone(),
            small_tangent: self.frame.small.clone(),
            mode: self.mode,
            value: level,
            parent_dim: j.dim,
        });
        let points: Vec<Vec<f64>> = hits
            .iter()
            .map(|(s, _)| linalg::add(&self.chart.origin, &s.offset))
            .collect();
        stratum.seed_points = points.clone();
        Ok(LevelStratum {
            stratum,
            parent: j.id.clone(),
            mode: self.mode,
            level,
            points,
            residuals: hits.iter().map(|(_, r)| *r).collect(),
        })
    }
}

fn value_at(chart: &Chart, frame: &KuoFrame, mode: Mode, s: &LocalSample, params: &Params) -> f64 {
    let offset = linalg::add(&linalg::sub(&chart.origin, &frame.base), &s.offset);
    kuo_value(frame, &s.tangent, &offset, mode, params.tol_on).0
}

fn project_points(chart: &Chart, points: &[Vec<f64>], params: &Params) -> Vec<LocalSample> {
    points
        .iter()
        .filter_map(|p| {
            let u = linalg::sub(p, &chart.origin);
            (0..chart.num_pieces()).find_map(|k| chart.project(k, &u, None, params))
        })
        .collect()
}

fn van_der_corput(mut k: u64) -> f64 {
    let (mut v, mut denom) = (0.0, 1.0);
    while k > 0 {
        denom *= 2.0;
        v += (k & 1) as f64 / denom;
        k >>= 1;
    }
    v
}

/// Up to `n_levels` levels of `P` (`P^a` or `P^b` relative to `frame`) that
/// are numerically regular on `j` near the base point, in increasing order.
/// Candidates come from a van der Corput sequence in `(0, s)` for `P^a` and
/// `(0, s + 1)` for `P^b`; a candidate is kept when at least ten points of
/// its level set are found and `|grad P| > tol_grad` at all of them.
pub fn find_regular_levels(
    j: &Stratum,
    frame: &KuoFrame,
    which: Mode,
    n_levels: usize,
    seed: u64,
    params: &Params,
) -> Result<Vec<f64>, RefineError> {
    if n_levels == 0 {
        return Ok(Vec::new());
    }
    LevelSearch::new(j, frame, which, &SampleSource::Shells, seed, params)?.levels(n_levels, params)
}

/// [`find_regular_levels`] with an explicit sample source.
pub fn find_regular_levels_from(
    j: &Stratum,
    frame: &KuoFrame,
    which: Mode,
    n_levels: usize,
    source: &SampleSource,
    seed: u64,
    params: &Params,
) -> Result<Vec<f64>, RefineError> {
    if n_levels == 0 {
        return Ok(Vec::new());
    }
    LevelSearch::new(j, frame, which, source, seed, params)?.levels(n_levels, params)
}

/// Samples the level set `{P = level}` on `j`.
pub fn level_stratum(
    j: &Stratum,
    frame: &KuoFrame,
    which: Mode,
    level: f64,
    source: &SampleSource,
    seed: u64,
    params: &Params,
) -> Result<LevelStratum, RefineError> {
    LevelSearch::new(j, frame, which, source, seed, params)?.level_stratum(j, level, params)
}

/// Bisection for `P = level` along the chord between two points of `j`.
pub fn bisect_level(
    j: &Stratum,
    frame: &KuoFrame,
    which: Mode,
    level: f64,
    from: &[f64],
    to: &[f64],
    params: &Params,
) -> Result<(Vec<f64>, f64), RefineError> {
    let search = LevelSearch::new(
        j,
        frame,
        which,
        &SampleSource::Points(vec![from.to_vec(), to.to_vec()]),
        0,
        params,
    )?;
    if search.samples.len() != 2 {
        return Err(RefineError::NoStraddlingPairs(level));
    }
    let (a, b) = if search.samples[0].1 < level { (0, 1) } else { (1, 0) };
    if !(search.samples[a].1 < level && search.samples[b].1 > level) {
        return Err(RefineError::NoStraddlingPairs(level));
    }
    let d = linalg::dist(from, to);
    let (s, r) = search
        .bisect(a, b, d, level, params)
        .ok_or(RefineError::NoStraddlingPairs(level))?;
    Ok((linalg::add(&search.chart.origin, &s.offset), r))
}

/// Smallest relevant singular value of the projection along `l` restricted
/// to the tangent plane `t`: zero exactly where the projection drops rank.
pub fn projection_defect(t: &Plane, l: &Plane) -> f64 {
    let perp = l.complement();
    let (d, q) = (t.dim(), perp.dim());
    if d == 0 || q == 0 {
        return 0.0;
    }
    let a = perp.basis().transpose() * t.basis();
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv[d.min(q) - 1]
}

/// Simplest dyadic rational within `tol` of `v` (denominator up to `2^40`).
pub fn snap_rational(v: f64, tol: f64) -> Rational {
    for bits in 0..=40 {
        let r = rational_rounded(v, bits);
        if (r.to_f64().unwrap_or(f64::NAN) - v).abs() <= tol {
            return r;
        }
    }
    rational_rounded(v, 40)
}

/// Critical points of the projection along `l` restricted to `j`.
///
/// For a polynomial parent the locus is cut out exactly by the parent
/// equations and the maximal minors of `[Jacobian; basis of l^perp]`,
/// whose kernel is `T_y j ∩ l` (or whose rows become dependent when the
/// tangent plane and `l` fail to span). Level-set parents are handled
/// numerically by Rolle scans along chords between their sample points.
pub fn critical_locus(j: &Stratum, l: &OrientedPlane, params: &Params) -> Result<CriticalStratum, RefineError> {
    let m = j.ambient_dim();
    let lp = l.plane();
    if lp.ambient_dim() != m {
        return Err(RefineError::Unsupported(format!(
            "plane lives in R^{}, stratum in R^{m}",
            lp.ambient_dim()
        )));
    }
    let samples = stratum_samples(j, params);
    let tangents: Vec<Plane> = samples.iter().filter_map(|p| j.tangent_at(p, params).ok()).collect();
    if !tangents.is_empty()
        && !tangents
            .iter()
            .any(|t| projection_defect(t, &lp) > params.tol_rank.sqrt())
    {
        return Err(RefineError::NotTransversal(j.id.clone()));
    }
    if j.level.is_some() {
        return numerical_critical(j, l, &samples, params);
    }
    let perp = lp.complement();
    let rows: Vec<Vec<Rational>> = perp
        .columns()
        .iter()
        .map(|c| c.iter().map(|&v| snap_rational(v, 1e-13)).collect())
        .collect();
    let c = m - j.dim;
    let size = (c + perp.dim()).min(m);
    let mut pieces = Vec::new();
    for piece in &j.carrier.pieces {
        let mut mat = jacobian(&piece.equations)?;
        for r in &rows {
            mat.push(r.iter().map(|q| Polynomial::constant(m, q.clone())).collect());
        }
        if mat.len() < size {
            continue;
        }
        let mut eqs = piece.equations.clone();
        let mut empty = false;
        for q in minors(&mat, size)? {
            if q.is_zero() {
                continue;
            }
            if q.is_nonzero_constant() {
                empty = true;
                break;
            }
            if !eqs.iter().any(|e| *e == q || *e == -&q) {
                eqs.push(q);
            }
        }
        if !empty {
            pieces.push(BasicSet::new(eqs, piece.inequalities.clone(), m)?);
        }
    }
    let system = Semivariety { pieces, ambient_dim: m };
    let found = sample_global(&system, params.n_probe, params.seed, "critical", c + 1..=m, params);
    let mut keep = Vec::new();
    let mut points = Vec::new();
    for g in found {
        if j.membership(&g.point, params)? == Membership::Outside {
            continue;
        }
        if points.iter().any(|p: &Vec<f64>| linalg::dist(p, &g.point) <= 1e-9) {
            continue;
        }
        points.push(g.point.clone());
        keep.push(g);
    }
    let dim = if keep.is_empty() {
        j.dim.saturating_sub(1)
    } else {
        vote_dim(&system, &keep, params.tol_rank).unwrap_or(j.dim.saturating_sub(1))
    };
    let mut stratum = Stratum::new(format!("{}^crit", j.id), dim, system.clone());
    stratum.exclusions = j.exclusions.clone();
    stratum.seed_points = points.clone();
    Ok(CriticalStratum {
        stratum,
        parent: j.id.clone(),
        plane: l.clone(),
        points,
        defining_system: Some(system),
    })
}

fn stratum_samples(j: &Stratum, params: &Params) -> Vec<Vec<f64>> {
    if !j.seed_points.is_empty() {
        return j.seed_points.clone();
    }
    let codim = j.ambient_dim() - j.dim;
    sample_global(
        &j.carrier,
        params.n_probe,
        params.seed,
        "stratum-samples",
        codim..=codim,
        params,
    )
    .into_iter()
    .map(|g| g.point)
    .filter(|p| j.membership(p, params).is_ok_and(|s| s != Membership::Outside))
    .collect()
}

fn numerical_critical(
    j: &Stratum,
    l: &OrientedPlane,
    samples: &[Vec<f64>],
    params: &Params,
) -> Result<CriticalStratum, RefineError> {
    let m = j.ambient_dim();
    if j.dim + l.dim() != m {
        return Err(RefineError::Unsupported(format!(
            "numerical critical locus needs dim {} + dim l = {m}",
            j.dim
        )));
    }
    const STEPS: usize = 16;
    let mut points: Vec<Vec<f64>> = Vec::new();
    for (a, p) in samples.iter().enumerate().take(32) {
        let Some((b, _)) = samples
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != a)
            .map(|(b, q)| (b, linalg::dist(p, q)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
        else {
            continue;
        };
        let chart = Chart::new(j, p)?;
        let target = linalg::sub(&samples[b], p);
        let d = linalg::norm(&target);
        let path: Vec<LocalSample> = (0..=STEPS)
            .map_while(|k| {
                let seed = linalg::scale(&target, k as f64 / STEPS as f64);
                (0..chart.num_pieces()).find_map(|pc| chart.project(pc, &seed, Some(d), params))
            })
            .collect();
        if path.len() < 2 {
            continue;
        }
        let ts: Vec<TangentSample> = path
            .iter()
            .map(|s| TangentSample::new(linalg::add(p, &s.offset), s.tangent.clone()))
            .collect();
        let Ok(Some(k)) = rolle_scan(&ts, l, params.tol_det) else {
            continue;
        };
        let k = k.max(1);
        let planes: Vec<Plane> = path[..=k].iter().map(|s| s.tangent.clone()).collect();
        let Ok(oriented) = transport_orientation(&planes, &OrientedPlane::from_plane(&planes[0])) else {
            continue;
        };
        let sign0 = orientation_det(&oriented[k - 1], l)?.signum();
        let (mut lo, mut hi) = (path[k - 1].clone(), path[k].clone());
        let mut lo_frame = oriented[k - 1].clone();
        for _ in 0..50 {
            let mid_seed = linalg::scale(&linalg::add(&lo.offset, &hi.offset), 0.5);
            let Some(mid) = chart.project(lo.piece, &mid_seed, Some(d), params) else {
                break;
            };
            let Ok(o) = transport_orientation(&[lo.tangent.clone(), mid.tangent.clone()], &lo_frame) else {
                break;
            };
            let det = orientation_det(&o[1], l)?;
            if det.signum() == sign0 && det.abs() > params.tol_det {
                lo = mid;
                lo_frame = o[1].clone();
            } else {
                hi = mid;
            }
            if linalg::dist(&lo.offset, &hi.offset) <= 1e-12 * d {
                break;
            }
        }
        let y = linalg::add(p, &hi.offset);
        if !points.iter().any(|q| linalg::dist(q, &y) <= 1e-9) {
            points.push(y);
        }
    }
    let mut stratum = j.clone();
    stratum.id = format!("{}^crit", j.id);
    stratum.dim = j.dim.saturating_sub(1);
    stratum.seed_points = points.clone();
    Ok(CriticalStratum {
        stratum,
        parent: j.id.clone(),
        plane: l.clone(),
        points,
        defining_system: None,
    })
}

/// How many level strata are emitted per irregular point.
const LEVELS_PER_POINT: usize = 2;

/// Refines `j` over `i` at the irregular points of `probe` (for `mode`).
pub fn refine_pair(
    j: &Stratum,
    i: &Stratum,
    probe: &SingProbe,
    mode: Mode,
    params: &Params,
) -> Result<PairRefinement, RefineError> {
    let irregular: Vec<Vec<f64>> = probe.irregular_points(mode).iter().map(|e| e.x.clone()).collect();
    if irregular.is_empty() {
        return Err(RefineError::NoIrregularPoints(mode.as_str()));
    }
    let radii = params.radii();
    let resolution = radii[radii.len() / 2];
    let mut strata: Vec<NewStratum> = Vec::new();
    let mut cases = Vec::new();
    let (mut plus, mut minus) = (0usize, 0usize);
    let mut anomalies = Vec::new();
    for x in &irregular {
        let ap = approach(j, i, x, params)?;
        let check = match mode {
            Mode::A => evaluate_a(&ap, params),
            Mode::B => evaluate_b(&ap, params),
        };
        let mut limits = check.kuo_limits.clone();
        limits.sort_by(f64::total_cmp);
        let planes = limit_points(&ap.trace, LimitKind::Planes, params.cluster_tol_plane).unwrap_or_default();
        let seed = rng::derive(params.seed, "refine", probe_index(x));
        let mut report = CaseReport {
            x: x.clone(),
            case: RefineCase::Anomaly,
            kuo_limits: limits.clone(),
            plane_clusters: planes.len(),
            levels: Vec::new(),
            rolle_index: None,
            note: None,
        };
        if limits.len() >= 2 {
            report.case = RefineCase::Levels;
            let search = LevelSearch::new(j, &ap.frame, mode, &SampleSource::Shells, seed, params)?;
            let (lo, hi) = (limits[0], limits[limits.len() - 1]);
            match search.levels(params.n_levels, params) {
                Ok(levels) => {
                    let between: Vec<f64> = levels.into_iter().filter(|&e| e > lo && e < hi).collect();
                    report.levels = between.clone();
                    for level in between.into_iter().take(LEVELS_PER_POINT) {
                        match search.level_stratum(j, level, params) {
                            Ok(mut ls) => {
                                plus += 1;
                                ls.stratum.id = format!("{}^+{plus}", j.id);
                                strata.push(NewStratum::Level(ls));
                            }
                            Err(e) => report.note = Some(e.to_string()),
                        }
                    }
                }
                Err(e) => report.note = Some(e.to_string()),
            }
        } else if planes.len() >= 2 {
            report.case = RefineCase::Critical;
            let (p0, p1) = (planes[0].plane().unwrap(), planes[1].plane().unwrap());
            let t0 = OrientedPlane::from_plane(p0);
            let t1 = OrientedPlane::from_plane(p1);
            match random_separating_plane(&t0, &t1, &[], 256, seed, params.tol_grass, params.tol_det) {
                Ok((l, _)) => {
                    report.rolle_index = rolle_between(j, &ap, &planes, &l, params);
                    if report.rolle_index.is_none() {
                        report.note = Some("no sign change along the sampled connecting path".into());
                    }
                    match critical_locus(j, &l, params) {
                        Ok(mut cs) => {
                            minus += 1;
                            cs.stratum.id = format!("{}^-{minus}", j.id);
                            strata.push(NewStratum::Critical(cs));
                        }
                        Err(e) => report.note = Some(e.to_string()),
                    }
                }
                Err(e) => report.note = Some(e.to_string()),
            }
        } else {
            anomalies.push(x.clone());
        }
        cases.push(report);
    }
    if strata.is_empty() && !anomalies.is_empty() && anomalies.len() == irregular.len() {
        return Err(RefineError::Anomaly(anomalies));
    }
    let mut frontier = Vec::new();
    let mut contained = Vec::new();
    for x in &irregular {
        let small = small_tangent(i, x, params)?;
        let mut near_any = false;
        let mut boundary = Vec::new();
        for ns in &strata {
            let near: Vec<Vec<f64>> = ns
                .points()
                .iter()
                .map(|p| linalg::sub(p, x))
                .filter(|u| linalg::norm(u) <= params.r0)
                .collect();
            if near.iter().any(|u| linalg::norm(u) <= resolution) {
                near_any = true;
            }
            if !near.is_empty() && !is_essential(&small, &near) {
                boundary.push(ns.stratum().id.clone());
            }
        }
        for source in &boundary {
            frontier.push(FrontierSet {
                small: i.id.clone(),
                source: source.clone(),
                points: vec![x.clone()],
            });
        }
        contained.push(near_any || !boundary.is_empty());
    }
    let monotonicity = restriction_monotonicity(j, &strata, &irregular, i, mode, params);
    Ok(PairRefinement {
        big: j.id.clone(),
        small: i.id.clone(),
        mode,
        strata,
        frontier,
        cases,
        monotonicity,
        contained,
    })
}

fn probe_index(x: &[f64]) -> u64 {
    rng::derive(0, &format!("{x:?}"), 0)
}

/// Rolle scan along a projected chord between the closest members of the
/// first two plane clusters in the same shell.
fn rolle_between(
    j: &Stratum,
    ap: &crate::whitney::Approach,
    planes: &[crate::kuo::LimitCluster],
    l: &OrientedPlane,
    params: &Params,
) -> Option<usize> {
    const STEPS: usize = 32;
    let entries = &ap.trace.entries;
    let mut best: Option<(f64, usize, usize)> = None;
    for &a in &planes[0].members {
        for &b in &planes[1].members {
            if entries[a].shell != entries[b].shell {
                continue;
            }
            let d = linalg::dist(&entries[a].offset, &entries[b].offset);
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, a, b));
            }
        }
    }
    let (d, a, b) = best?;
    let chart = Chart::new(j, &ap.frame.base).ok()?;
    let (ua, ub) = (&entries[a].offset, &entries[b].offset);
    let path: Vec<TangentSample> = (0..=STEPS)
        .map_while(|k| {
            let t = k as f64 / STEPS as f64;
            let seed = linalg::add(ua, &linalg::scale(&linalg::sub(ub, ua), t));
            let s = (0..chart.num_pieces()).find_map(|pc| chart.project(pc, &seed, Some(d), params))?;
            Some(TangentSample::new(linalg::add(&ap.frame.base, &s.offset), s.tangent))
        })
        .collect();
    rolle_scan(&path, l, params.tol_det).ok().flatten()
}

/// Compares `P` computed with the new strata's tangents against `P` with
/// the parent tangent at the new strata's points.
fn restriction_monotonicity(
    j: &Stratum,
    strata: &[NewStratum],
    xs: &[Vec<f64>],
    i: &Stratum,
    mode: Mode,
    params: &Params,
) -> Monotonicity {
    let mut checked = 0;
    let mut max_deficit = f64::NEG_INFINITY;
    for ns in strata {
        let base = match ns {
            NewStratum::Level(l) => l.stratum.level.as_ref().map(|c| c.base.clone()),
            NewStratum::Critical(_) => None,
        }
        .or_else(|| xs.first().cloned());
        let Some(base) = base else { continue };
        let Ok(small) = small_tangent(i, &base, params) else {
            continue;
        };
        let frame = KuoFrame::new(base.clone(), small);
        for p in ns.points() {
            let (Ok(tp), Ok(ts)) = (j.tangent_at(p, params), ns.stratum().tangent_at(p, params)) else {
                continue;
            };
            let off = linalg::sub(p, &base);
            let parent = kuo_value(&frame, &tp, &off, mode, params.tol_on).0;
            let sub = kuo_value(&frame, &ts, &off, mode, params.tol_on).0;
            checked += 1;
            max_deficit = max_deficit.max(parent - sub);
        }
    }
    Monotonicity {
        checked,
        max_deficit: if checked == 0 { 0.0 } else { max_deficit },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertStatus {
    Certified,
    Refuted,
    Incomplete,
}

impl CertStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertStatus::Certified => "certified",
            CertStatus::Refuted => "refuted",
            CertStatus::Incomplete => "incomplete",
        }
    }

    fn worst(self, other: CertStatus) -> CertStatus {
        use CertStatus::*;
        match (self, other) {
            (Refuted, _) | (_, Refuted) => Refuted,
            (Incomplete, _) | (_, Incomplete) => Incomplete,
            _ => Certified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceRecord {
    pub equations: Vec<String>,
    pub inequalities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRecord {
    pub id: String,
    pub dim: usize,
    pub carrier: Vec<PieceRecord>,
    /// Each exclusion is a union of basic pieces.
    pub exclusions: Vec<Vec<PieceRecord>>,
    /// Base points used when this stratum is the small one of a pair.
    pub grid: Vec<Vec<f64>>,
    /// `filtration`, `split of <id>` or `point of <id>`.
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub in_frontier: bool,
    pub a: Option<Status>,
    pub b: Option<Status>,
    /// Largest Kuo limit per mode.
    pub kuo_a: Option<f64>,
    pub kuo_b: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub big: String,
    pub small: String,
    pub frontier: bool,
    pub points: Vec<PointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationCertificate {
    pub schema_version: u32,
    pub variables: Vec<String>,
    pub mode: Mode,
    pub status: CertStatus,
    pub params: Params,
    pub rounds: usize,
    pub strata: Vec<StratumRecord>,
    /// `(big, small)`: the small stratum lies in the closure of the big one.
    pub frontier: Vec<(String, String)>,
    pub pairs: Vec<PairRecord>,
    pub refinements: Vec<RefinementSummary>,
    pub diagnostics: Vec<String>,
}

impl StratificationCertificate {
    pub fn stratum(&self, id: &str) -> Option<&StratumRecord> {
        self.strata.iter().find(|s| s.id == id)
    }

    /// Rebuilds the strata from their recorded equations.
    pub fn rebuild(&self) -> Result<Vec<Stratum>, RefineError> {
        self.strata.iter().map(|r| r.to_stratum(&self.variables)).collect()
    }

    /// Copy without the given stratum (and every pair and edge naming it).
    pub fn without_stratum(&self, id: &str) -> StratificationCertificate {
        let mut c = self.clone();
        c.strata.retain(|s| s.id != id);
        c.pairs.retain(|p| p.big != id && p.small != id);
        c.frontier.retain(|(b, s)| b != id && s != id);
        c
    }
}

fn piece_record(p: &BasicSet, vars: &[String]) -> PieceRecord {
    PieceRecord {
        equations: p.equations.iter().map(|q| q.to_text(vars)).collect(),
        inequalities: p.inequalities.iter().map(|q| q.to_text(vars)).collect(),
    }
}

fn set_record(s: &Semivariety, vars: &[String]) -> Vec<PieceRecord> {
    s.pieces.iter().map(|p| piece_record(p, vars)).collect()
}

fn parse_set(pieces: &[PieceRecord], vars: &[String]) -> Result<Semivariety, RefineError> {
    let m = vars.len();
    let parse = |t: &Vec<String>| -> Result<Vec<Polynomial>, RefineError> {
        t.iter()
            .map(|q| parse_poly(q, vars).map_err(RefineError::from))
            .collect()
    };
    let pieces = pieces
        .iter()
        .map(|p| Ok(BasicSet::new(parse(&p.equations)?, parse(&p.inequalities)?, m)?))
        .collect::<Result<Vec<_>, RefineError>>()?;
    Ok(Semivariety { pieces, ambient_dim: m })
}

impl StratumRecord {
    pub fn to_stratum(&self, vars: &[String]) -> Result<Stratum, RefineError> {
        let mut s = Stratum::new(self.id.clone(), self.dim, parse_set(&self.carrier, vars)?);
        s.exclusions = self
            .exclusions
            .iter()
            .map(|e| parse_set(e, vars))
            .collect::<Result<_, _>>()?;
        s.seed_points = self.grid.clone();
        Ok(s)
    }
}

/// A stratum during stratification, with the samples it was built from.
#[derive(Debug, Clone)]
struct Working {
    stratum: Stratum,
    samples: Vec<Vec<f64>>,
    grid: Vec<Vec<f64>>,
    origin: String,
}

/// Representatives of well-separated clusters, snapped to nearby rational
/// points at which some carrier piece vanishes exactly.
fn point_grid(s: &Stratum, samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| {
        a.iter()
            .map(|v| v.abs())
            .sum::<f64>()
            .total_cmp(&b.iter().map(|v| v.abs()).sum())
    });
    for p in sorted {
        if !reps.iter().any(|r| linalg::dist(r, &p) <= 1e-3) {
            reps.push(p);
        }
    }
    reps.into_iter()
        .map(|p| {
            for tol in [1e-12, 1e-9, 1e-6, 1e-4] {
                let exact: Vec<Rational> = p.iter().map(|&v| snap_rational(v, tol)).collect();
                let on = s.carrier.pieces.iter().any(|piece| {
                    piece.equations.iter().all(|q| {
                        q.eval_exact(&exact)
                            .is_ok_and(|v| v == Rational::from_integer(0.into()))
                    }) && piece
                        .inequalities
                        .iter()
                        .all(|q| q.eval_exact(&exact).is_ok_and(|v| v > Rational::from_integer(0.into())))
                });
                if on {
                    return exact.iter().map(|r| r.to_f64().unwrap_or(f64::NAN)).collect();
                }
            }
            p
        })
        .collect()
}

/// Farthest-point selection of `n` samples that keep `margin` away from
/// the given lower-dimensional points.
fn spread_grid(samples: &[Vec<f64>], lower: &[Vec<f64>], n: usize, margin: f64) -> Vec<Vec<f64>> {
    let pool: Vec<&Vec<f64>> = samples
        .iter()
        .filter(|p| lower.iter().all(|q| linalg::dist(p, q) >= margin))
        .collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let Some(first) = pool.iter().min_by(|a, b| {
        linalg::norm(a)
            .total_cmp(&linalg::norm(b))
            .then(a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
    }) else {
        return out;
    };
    out.push((*first).clone());
    while out.len() < n {
        let next = pool
            .iter()
            .map(|p| (out.iter().map(|q| linalg::dist(p, q)).fold(f64::INFINITY, f64::min), *p))
            .filter(|(d, _)| *d > 1e-6)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match next {
            Some((_, p)) => out.push(p.clone()),
            None => break,
        }
    }
    out
}

fn compute_grid(w: &Working, lower: &[Vec<f64>], params: &Params) -> Vec<Vec<f64>> {
    if w.stratum.dim == 0 {
        point_grid(&w.stratum, &w.samples)
    } else {
        let n = params.probe_points * w.stratum.dim;
        spread_grid(&w.samples, lower, n, 0.1 * params.box_radius)
    }
}

fn inside(s: &Stratum, p: &[f64], params: &Params) -> bool {
    s.membership(p, params).is_ok_and(|m| m == Membership::Inside)
}

/// Splits a curve stratum by a hyperplane through one of its boundary
/// points so that `front` and `rest` end up on opposite sides.
fn split_curve(
    w: &Working,
    boundary: &[Vec<f64>],
    front: &[Vec<f64>],
    rest: &[Vec<f64>],
    params: &Params,
) -> Option<(Working, Working)> {
    if w.stratum.dim != 1 {
        return None;
    }
    let m = w.stratum.ambient_dim();
    for p in boundary {
        for f in front {
            let d = linalg::sub(f, p);
            let n = linalg::norm(&d);
            if n == 0.0 {
                continue;
            }
            let coeffs: Vec<Rational> = d.iter().map(|&v| snap_rational(v / n, 1.0 / 64.0)).collect();
            let cf: Vec<f64> = coeffs.iter().map(|c| c.to_f64().unwrap_or(0.0)).collect();
            let side = |q: &Vec<f64>| linalg::dot(&cf, &linalg::sub(q, p));
            if !front.iter().all(|q| side(q) > 0.0) || !rest.iter().all(|q| side(q) < 0.0) {
                continue;
            }
            let exact_p: Vec<Rational> = p.iter().map(|&v| snap_rational(v, 1e-12)).collect();
            let c0 = -coeffs
                .iter()
                .zip(&exact_p)
                .fold(Rational::from_integer(0.into()), |acc, (c, q)| acc + c * q);
            let h = Polynomial::linear(&coeffs, c0);
            let make = |sign: bool, suffix: usize| -> Option<Working> {
                let g = if sign { h.clone() } else { -&h };
                let mut st = w.stratum.clone();
                st.id = format!("{}.{suffix}", w.stratum.id);
                st.carrier = Semivariety {
                    pieces: st
                        .carrier
                        .pieces
                        .iter()
                        .map(|piece| {
                            let mut ineqs = piece.inequalities.clone();
                            ineqs.push(g.clone());
                            BasicSet::new(piece.equations.clone(), ineqs, m).ok()
                        })
                        .collect::<Option<Vec<_>>>()?,
                    ambient_dim: m,
                };
                let samples: Vec<Vec<f64>> = w.samples.iter().filter(|q| inside(&st, q, params)).cloned().collect();
                Some(Working {
                    stratum: st,
                    samples,
                    grid: Vec::new(),
                    origin: format!("split of {}", w.stratum.id),
                })
            };
            return Some((make(true, 1)?, make(false, 2)?));
        }
    }
    None
}

fn point_stratum(id: String, x: &[f64], m: usize) -> Result<Stratum, RefineError> {
    let eqs: Vec<Polynomial> = (0..m)
        .map(|k| {
            let mut coeffs = vec![Rational::from_integer(0.into()); m];
            coeffs[k] = Rational::from_integer(1.into());
            Polynomial::linear(&coeffs, -snap_rational(x[k], 1e-12))
        })
        .collect();
    let mut s = Stratum::new(id, 0, Semivariety::from_equations(eqs, m)?);
    s.seed_points = vec![x.to_vec()];
    Ok(s)
}

struct Probed {
    big: usize,
    small: usize,
    big_id: String,
    small_id: String,
    x: Vec<f64>,
    result: Result<TripleVerdict, WhitneyError>,
}

fn pair_seed(params: &Params, round: usize) -> Params {
    let mut p = params.clone();
    p.seed = rng::derive(params.seed, "stratify-round", round as u64);
    p
}

fn probe_all(work: &[Working], params: &Params) -> Vec<Probed> {
    let mut tasks = Vec::new();
    for (b, hi) in work.iter().enumerate() {
        for (s, lo) in work.iter().enumerate() {
            if hi.stratum.dim > lo.stratum.dim {
                for x in &lo.grid {
                    tasks.push((b, s, x.clone()));
                }
            }
        }
    }
    exec::par_map(&tasks, params.parallel, |_, (b, s, x)| Probed {
        big: *b,
        small: *s,
        big_id: work[*b].stratum.id.clone(),
        small_id: work[*s].stratum.id.clone(),
        x: x.clone(),
        result: classify_triple(&work[*b].stratum, &work[*s].stratum, x, params),
    })
}

fn point_record(p: &Probed) -> PointRecord {
    match &p.result {
        Ok(v) => PointRecord {
            x: p.x.clone(),
            in_frontier: true,
            a: Some(v.a.status),
            b: Some(v.b.status),
            kuo_a: v.a.kuo_limits.iter().copied().reduce(f64::max),
            kuo_b: v.b.kuo_limits.iter().copied().reduce(f64::max),
            error: None,
        },
        Err(e) => PointRecord {
            x: p.x.clone(),
            in_frontier: false,
            a: None,
            b: None,
            kuo_a: None,
            kuo_b: None,
            error: (!matches!(e, WhitneyError::NotInFrontier(_))).then(|| e.to_string()),
        },
    }
}

/// Builds a Whitney (a) or (b) regular stratification of `v`.
///
/// Starts from the differences of the singular-locus filtration and
/// repeats: probe every pair of strata of different dimension on the grid
/// of the smaller one; split curve strata whose points are only partly in
/// the closure of a bigger stratum; carve isolated irregular points into
/// point strata, recording the level or critical refinement at them; stop
/// when every probed triple is regular.
pub fn stratify(v: &Semivariety, mode: Mode, params: &Params) -> Result<StratificationCertificate, RefineError> {
    stratify_named(v, &default_var_names(v.ambient_dim), mode, params)
}

/// Differences of consecutive filtration levels, highest dimension first,
/// named `S<dim>`. Seed points are the level samples lying on the stratum.
pub fn initial_strata(filtration: &Filtration, params: &Params) -> Vec<Stratum> {
    let mut out = Vec::new();
    for (k, level) in filtration.levels.iter().enumerate() {
        let mut st = Stratum::new(format!("S{}", level.dim), level.dim, level.set.clone());
        if k > 0 {
            st.exclusions = vec![filtration.levels[k - 1].set.clone()];
        }
        st.seed_points = level
            .samples
            .iter()
            .filter(|p| st.membership(p, params).is_ok_and(|s| s != Membership::Outside))
            .cloned()
            .collect();
        out.push(st);
    }
    out.reverse();
    out
}

pub fn stratify_named(
    v: &Semivariety,
    vars: &[String],
    mode: Mode,
    params: &Params,
) -> Result<StratificationCertificate, RefineError> {
    let m = v.ambient_dim;
    let filtration = filtrate(v, None, params)?;
    let top = filtration.levels.last().map_or(0, |l| l.dim);
    let mut work: Vec<Working> = initial_strata(&filtration, params)
        .into_iter()
        .map(|mut st| Working {
            samples: std::mem::take(&mut st.seed_points),
            stratum: st,
            grid: Vec::new(),
            origin: "filtration".into(),
        })
        .collect();
    let max_rounds = params.max_depth * (top + 1);
    let mut diagnostics = Vec::new();
    let mut refinements = Vec::new();
    let mut status = CertStatus::Incomplete;
    let mut rounds = 0;
    let mut last: Vec<Probed> = Vec::new();
    let mut carved = 0usize;
    while rounds < max_rounds.max(1) {
        rounds += 1;
        for idx in 0..work.len() {
            let lower: Vec<Vec<f64>> = work
                .iter()
                .filter(|o| o.stratum.dim < work[idx].stratum.dim)
                .flat_map(|o| o.samples.iter().cloned())
                .collect();
            work[idx].grid = compute_grid(&work[idx], &lower, params);
        }
        let round_params = pair_seed(params, rounds);
        let probed = probe_all(&work, &round_params);
        // Frontier condition: a smaller stratum is either in the closure of
        // a bigger one or disjoint from it.
        let mut split: Option<(usize, Working, Working)> = None;
        let mut violation = None;
        for (b, hi) in work.iter().enumerate() {
            for (s, lo) in work.iter().enumerate() {
                if hi.stratum.dim <= lo.stratum.dim {
                    continue;
                }
                let here: Vec<&Probed> = probed.iter().filter(|p| p.big == b && p.small == s).collect();
                let front: Vec<Vec<f64>> = here.iter().filter(|p| p.result.is_ok()).map(|p| p.x.clone()).collect();
                let rest: Vec<Vec<f64>> = here
                    .iter()
                    .filter(|p| matches!(p.result, Err(WhitneyError::NotInFrontier(_))))
                    .map(|p| p.x.clone())
                    .collect();
                if front.is_empty() || rest.is_empty() || split.is_some() {
                    continue;
                }
                let boundary: Vec<Vec<f64>> = work
                    .iter()
                    .filter(|o| o.stratum.dim < lo.stratum.dim)
                    .flat_map(|o| o.grid.iter().cloned())
                    .collect();
                match split_curve(lo, &boundary, &front, &rest, params) {
                    Some((p, q)) => split = Some((s, p, q)),
                    None => {
                        violation = Some(format!(
                            "frontier condition fails for ({}, {}) and no split was found",
                            hi.stratum.id, lo.stratum.id
                        ))
                    }
                }
            }
        }
        if let Some((s, p, q)) = split {
            diagnostics.push(format!(
                "round {rounds}: split {} into {} and {} (frontier condition)",
                work[s].stratum.id, p.stratum.id, q.stratum.id
            ));
            work.splice(s..=s, [p, q]);
            last = probed;
            continue;
        }
        if let Some(msg) = violation {
            diagnostics.push(format!("round {rounds}: {msg}"));
            status = CertStatus::Refuted;
            last = probed;
            break;
        }
        // Irregular points.
        let mut carve: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut inconclusive = 0;
        for p in &probed {
            match &p.result {
                Ok(v) => match v.status(mode) {
                    Status::Irregular => carve.push((p.big, p.small, p.x.clone())),
                    Status::Inconclusive => inconclusive += 1,
                    Status::Regular => {}
                },
                Err(WhitneyError::NotInFrontier(_)) => {}
                Err(e) => {
                    inconclusive += 1;
                    diagnostics.push(format!("round {rounds}: {e}"));
                }
            }
        }
        if !carve.is_empty() {
            let mut changed = false;
            for (b, s, x) in &carve {
                let probe = SingProbe {
                    big: work[*b].stratum.id.clone(),
                    small: work[*s].stratum.id.clone(),
                    entries: probed
                        .iter()
                        .filter(|p| p.big == *b && p.small == *s && p.x == *x)
                        .map(|p| crate::whitney::ProbeEntry {
                            x: p.x.clone(),
                            verdict: p.result.clone().ok(),
                            error: None,
                        })
                        .collect(),
                    irregular_fraction_a: 0.0,
                    irregular_fraction_b: 0.0,
                    codim_ok_a: true,
                    codim_ok_b: true,
                };
                match refine_pair(&work[*b].stratum, &work[*s].stratum, &probe, mode, &round_params) {
                    Ok(r) => refinements.push(r.summary()),
                    Err(e) => diagnostics.push(format!("round {rounds}: refine {}: {e}", probe.big)),
                }
                if work[*s].stratum.dim == 0 {
                    continue;
                }
                carved += 1;
                let id = format!("{}.p{carved}", work[*s].stratum.id);
                let pt = point_stratum(id.clone(), x, m)?;
                work[*s].stratum.exclusions.push(pt.carrier.clone());
                work.push(Working {
                    stratum: pt,
                    samples: vec![x.clone()],
                    grid: Vec::new(),
                    origin: format!("point of {}", work[*s].stratum.id),
                });
                diagnostics.push(format!("round {rounds}: carved irregular point {x:?} into {id}"));
                changed = true;
            }
            last = probed;
            if changed {
                continue;
            }
            status = CertStatus::Incomplete;
            break;
        }
        last = probed;
        status = if inconclusive > 0 {
            diagnostics.push(format!("round {rounds}: {inconclusive} inconclusive triples"));
            CertStatus::Incomplete
        } else if work
            .iter()
            .any(|w| w.stratum.dim > 0 && w.grid.is_empty() && work.iter().any(|o| o.stratum.dim > w.stratum.dim))
        {
            diagnostics.push("a stratum has no probe points".into());
            CertStatus::Incomplete
        } else {
            CertStatus::Certified
        };
        break;
    }
    if rounds >= max_rounds && status == CertStatus::Incomplete && diagnostics.is_empty() {
        diagnostics.push(format!("budget of {max_rounds} rounds exhausted"));
    }
    work.sort_by(|a, b| b.stratum.dim.cmp(&a.stratum.dim).then(a.stratum.id.cmp(&b.stratum.id)));
    let mut pairs: Vec<PairRecord> = Vec::new();
    let mut frontier = Vec::new();
    for hi in &work {
        for lo in &work {
            if hi.stratum.dim <= lo.stratum.dim {
                continue;
            }
            let points: Vec<PointRecord> = last
                .iter()
                .filter(|p| p.big_id == hi.stratum.id && p.small_id == lo.stratum.id)
                .map(point_record)
                .collect();
            let is_front = !points.is_empty() && points.iter().all(|p| p.in_frontier);
            if is_front {
                frontier.push((hi.stratum.id.clone(), lo.stratum.id.clone()));
            }
            pairs.push(PairRecord {
                big: hi.stratum.id.clone(),
                small: lo.stratum.id.clone(),
                frontier: is_front,
                points,
            });
        }
    }
    let strata = work
        .iter()
        .map(|w| StratumRecord {
            id: w.stratum.id.clone(),
            dim: w.stratum.dim,
            carrier: set_record(&w.stratum.carrier, vars),
            exclusions: w.stratum.exclusions.iter().map(|e| set_record(e, vars)).collect(),
            grid: w.grid.clone(),
            origin: w.origin.clone(),
        })
        .collect();
    Ok(StratificationCertificate {
        schema_version: SCHEMA_VERSION,
        variables: vars.to_vec(),
        mode,
        status,
        params: params.clone(),
        rounds,
        strata,
        frontier,
        pairs,
        refinements,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyReport {
    pub status: CertStatus,
    pub seed: u64,
    pub cloud_points: usize,
    /// Cloud points of the set lying in no stratum.
    pub orphans: Vec<Vec<f64>>,
    /// Cloud points lying in two or more strata.
    pub overlaps: Vec<Vec<f64>>,
    /// Frontier edges recomputed from scratch that differ from the record.
    pub frontier_mismatches: Vec<String>,
    pub rechecked: usize,
    pub irregular: usize,
    pub inconclusive: usize,
    /// Replayable witnesses of the irregular re-checked triples.
    pub witnesses: Vec<Witness>,
    pub diagnostics: Vec<String>,
}

/// Independent re-check of a certificate with the seed in `params`:
/// partition of a fresh point cloud of `v` (samples of every filtration
/// level), the frontier relation recomputed at every grid point, and
/// fresh verdicts for every probed triple. The status only ever goes down.
pub fn certify(c: &StratificationCertificate, v: &Semivariety, params: &Params) -> Result<CertifyReport, RefineError> {
    let mut p = c.params.clone();
    p.seed = params.seed;
    p.parallel = params.parallel;
    let params = &p;
    let strata = c.rebuild()?;
    let mut status = c.status;
    let mut diagnostics = Vec::new();
    let filtration = filtrate(v, None, params)?;
    let cloud: Vec<Vec<f64>> = filtration
        .levels
        .iter()
        .flat_map(|l| l.samples.iter().cloned())
        .filter(|q| v.membership(q, params.tol_on).is_ok_and(|s| s == Membership::Inside))
        .collect();
    let mut orphans = Vec::new();
    let mut overlaps = Vec::new();
    for q in &cloud {
        let states: Vec<Membership> = strata
            .iter()
            .map(|s| s.membership(q, params).unwrap_or(Membership::Outside))
            .collect();
        let inside = states.iter().filter(|&&s| s == Membership::Inside).count();
        let unsure = states.iter().filter(|&&s| s == Membership::BoundaryUncertain).count();
        if inside == 0 && unsure == 0 {
            orphans.push(q.clone());
        } else if inside >= 2 {
            overlaps.push(q.clone());
        }
    }
    if !orphans.is_empty() || !overlaps.is_empty() {
        diagnostics.push(format!(
            "partition: {} orphan and {} overlapping cloud points",
            orphans.len(),
            overlaps.len()
        ));
        status = status.worst(CertStatus::Refuted);
    }
    let mut tasks = Vec::new();
    for (b, hi) in strata.iter().enumerate() {
        for (s, lo) in strata.iter().enumerate() {
            if hi.dim > lo.dim {
                for x in &lo.seed_points {
                    tasks.push((b, s, x.clone()));
                }
            }
        }
    }
    let results = exec::par_map(&tasks, params.parallel, |_, (b, s, x)| {
        classify_triple(&strata[*b], &strata[*s], x, params)
    });
    let mut frontier_mismatches = Vec::new();
    let (mut irregular, mut inconclusive) = (0, 0);
    let mut witnesses = Vec::new();
    for (b, hi) in strata.iter().enumerate() {
        for (s, lo) in strata.iter().enumerate() {
            if hi.dim <= lo.dim {
                continue;
            }
            let here: Vec<&Result<TripleVerdict, WhitneyError>> = tasks
                .iter()
                .zip(&results)
                .filter(|((tb, ts, _), _)| *tb == b && *ts == s)
                .map(|(_, r)| r)
                .collect();
            let inside = here.iter().filter(|r| r.is_ok()).count();
            let outside = here
                .iter()
                .filter(|r| matches!(r, Err(WhitneyError::NotInFrontier(_))))
                .count();
            if inside > 0 && outside > 0 {
                frontier_mismatches.push(format!("({}, {}): frontier condition fails", hi.id, lo.id));
            }
            let edge = !here.is_empty() && inside == here.len();
            let recorded = c.frontier.iter().any(|(x, y)| *x == hi.id && *y == lo.id);
            if edge != recorded {
                frontier_mismatches.push(format!(
                    "({}, {}): recorded {recorded}, recomputed {edge}",
                    hi.id, lo.id
                ));
            }
            for r in here {
                match r {
                    Ok(v) => match v.status(c.mode) {
                        Status::Irregular => {
                            irregular += 1;
                            witnesses.extend(v.check(c.mode).witness.clone());
                        }
                        Status::Inconclusive => inconclusive += 1,
                        Status::Regular => {}
                    },
                    Err(WhitneyError::NotInFrontier(_)) => {}
                    Err(e) => {
                        inconclusive += 1;
                        diagnostics.push(e.to_string());
                    }
                }
            }
        }
    }
    if !frontier_mismatches.is_empty() {
        status = status.worst(CertStatus::Refuted);
    }
    if irregular > 0 {
        diagnostics.push(format!("{irregular} irregular triples on re-check"));
        status = status.worst(CertStatus::Refuted);
    }
    if inconclusive > 0 {
        diagnostics.push(format!("{inconclusive} inconclusive triples on re-check"));
        status = status.worst(CertStatus::Incomplete);
    }
    Ok(CertifyReport {
        status,
        seed: params.seed,
        cloud_points: cloud.len(),
        orphans,
        overlaps,
        frontier_mismatches,
        rechecked: tasks.len(),
        irregular,
        inconclusive,
        witnesses,
        diagnostics,
    })
}
