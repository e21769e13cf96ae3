//! Semivarieties, strata, sampling and the singular-locus filtration.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::exec;
use crate::grassmann::{equilibrated_rank, normal_part, plane_distance, tangent_from_jacobian, GrassError, Plane};
use crate::kuo::{kuo_value, KuoFrame, Mode};
use crate::linalg;
use crate::params::Params;
use crate::polycore::{
    combinations, jacobian, minors, rational_from_f64, CompiledSystem, PolyError, Polynomial, Rational,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemiError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("converged point violates a strict inequality (value {0:e})")]
    InequalityViolated(f64),
    #[error("no converged samples")]
    NoSamples,
    #[error("ambiguous numerical rank; dimension votes {0:?}")]
    AmbiguousRank(Vec<(usize, usize)>),
    #[error("dimension {dim} out of range for ambient dimension {ambient}")]
    DimOutOfRange { dim: usize, ambient: usize },
    #[error("singular locus did not drop dimension ({from} -> {to})")]
    NonDecreasing { from: usize, to: usize },
    #[error("no samples of the stratum inside the ball")]
    EmptyBall,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Membership {
    Inside,
    BoundaryUncertain,
    Outside,
}

/// `{f_1 = .. = f_k = 0, g_1 > 0, .., g_l > 0}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicSet {
    pub equations: Vec<Polynomial>,
    pub inequalities: Vec<Polynomial>,
    pub ambient_dim: usize,
}

impl BasicSet {
    pub fn new(
        equations: Vec<Polynomial>,
        inequalities: Vec<Polynomial>,
        ambient_dim: usize,
    ) -> Result<BasicSet, SemiError> {
        for p in equations.iter().chain(&inequalities) {
            if p.num_vars() != ambient_dim {
                return Err(SemiError::DimensionMismatch {
                    expected: ambient_dim,
                    got: p.num_vars(),
                });
            }
        }
        Ok(BasicSet {
            equations,
            inequalities,
            ambient_dim,
        })
    }

    pub fn compiled(&self) -> (CompiledSystem, CompiledSystem) {
        (
            CompiledSystem::new(self.ambient_dim, &self.equations),
            CompiledSystem::new(self.ambient_dim, &self.inequalities),
        )
    }

    pub fn membership(&self, point: &[f64], tol_on: f64) -> Result<Membership, SemiError> {
        check_len(self.ambient_dim, point)?;
        let (eqs, ineqs) = self.compiled();
        Ok(piece_membership(&eqs, &ineqs, point, tol_on))
    }
}

fn piece_membership(eqs: &CompiledSystem, ineqs: &CompiledSystem, point: &[f64], tol_on: f64) -> Membership {
    let mut uncertain = false;
    for f in eqs.residual(point) {
        if !(f.abs() <= tol_on) {
            return Membership::Outside;
        }
    }
    for g in ineqs.residual(point) {
        if g.is_nan() || g < -tol_on {
            return Membership::Outside;
        }
        if g <= tol_on {
            uncertain = true;
        }
    }
    if uncertain {
        Membership::BoundaryUncertain
    } else {
        Membership::Inside
    }
}

fn check_len(m: usize, point: &[f64]) -> Result<(), SemiError> {
    if point.len() != m {
        return Err(SemiError::DimensionMismatch {
            expected: m,
            got: point.len(),
        });
    }
    Ok(())
}

/// Finite union of basic sets. An empty piece list is the empty set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Semivariety {
    pub pieces: Vec<BasicSet>,
    pub ambient_dim: usize,
}

impl Semivariety {
    pub fn empty(ambient_dim: usize) -> Semivariety {
        Semivariety {
            pieces: Vec::new(),
            ambient_dim,
        }
    }

    pub fn from_piece(piece: BasicSet) -> Semivariety {
        let m = piece.ambient_dim;
        Semivariety {
            pieces: vec![piece],
            ambient_dim: m,
        }
    }

    pub fn from_equations(equations: Vec<Polynomial>, ambient_dim: usize) -> Result<Semivariety, SemiError> {
        Ok(Semivariety::from_piece(BasicSet::new(
            equations,
            Vec::new(),
            ambient_dim,
        )?))
    }

    pub fn is_empty_description(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn membership(&self, point: &[f64], tol_on: f64) -> Result<Membership, SemiError> {
        check_len(self.ambient_dim, point)?;
        let mut best = Membership::Outside;
        for piece in &self.pieces {
            let (eqs, ineqs) = piece.compiled();
            best = best.min(piece_membership(&eqs, &ineqs, point, tol_on));
        }
        Ok(best)
    }
}

/// Restricts a stratum to a level set `{P = value}` of a Kuo map relative
/// to a fixed base point and small-stratum tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelConstraint {
    pub base: Vec<f64>,
    pub small_tangent: Plane,
    pub mode: Mode,
    pub value: f64,
    /// Dimension of the parent stratum whose tangent enters `P`.
    pub parent_dim: usize,
}

impl LevelConstraint {
    pub fn frame(&self) -> KuoFrame {
        KuoFrame::new(self.base.clone(), self.small_tangent.clone())
    }
}

/// A smooth piece of a semivariety with known dimension.
///
/// Points of the stratum lie in the carrier, outside every exclusion, and
/// on the level set when one is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub id: String,
    pub dim: usize,
    pub carrier: Semivariety,
    pub exclusions: Vec<Semivariety>,
    pub level: Option<LevelConstraint>,
    pub seed_points: Vec<Vec<f64>>,
}

impl Stratum {
    pub fn new(id: impl Into<String>, dim: usize, carrier: Semivariety) -> Stratum {
        Stratum {
            id: id.into(),
            dim,
            carrier,
            exclusions: Vec::new(),
            level: None,
            seed_points: Vec::new(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.carrier.ambient_dim
    }

    pub fn membership(&self, point: &[f64], params: &Params) -> Result<Membership, SemiError> {
        let mut status = self.carrier.membership(point, params.tol_on)?;
        if status == Membership::Outside {
            return Ok(status);
        }
        for e in &self.exclusions {
            match e.membership(point, params.tol_on)? {
                Membership::Inside => return Ok(Membership::Outside),
                Membership::BoundaryUncertain => status = Membership::BoundaryUncertain,
                Membership::Outside => {}
            }
        }
        if let Some(level) = &self.level {
            let chart = Chart::new(self, point)?;
            match chart.level_value(&vec![0.0; point.len()]) {
                Some(p) if (p - level.value).abs() <= params.tol_level => {}
                Some(_) => return Ok(Membership::Outside),
                None => status = status.max(Membership::BoundaryUncertain),
            }
        }
        Ok(status)
    }

    /// Tangent plane at an on-stratum point.
    pub fn tangent_at(&self, point: &[f64], params: &Params) -> Result<Plane, GrassError> {
        let chart = Chart::new(self, point).map_err(|e| GrassError::DimensionMismatch(e.to_string()))?;
        chart
            .tangent(0, &vec![0.0; point.len()], params.tol_rank)
            .ok_or(GrassError::RankMismatch {
                expected: self.dim,
                observed: usize::MAX,
            })
            .or_else(|_| {
                (1..chart.pieces.len())
                    .find_map(|k| chart.tangent(k, &vec![0.0; point.len()], params.tol_rank))
                    .ok_or(GrassError::RankMismatch {
                        expected: self.dim,
                        observed: usize::MAX,
                    })
            })
    }
}

/// Options for the Gauss-Newton corrector.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol_res: f64,
    /// Clamp on the length of each step.
    pub max_step: Option<f64>,
    /// Require the step to shrink to `1e-12 |u|` before accepting, instead
    /// of stopping as soon as the residual is small. Needed when the
    /// coordinates are offsets of tiny magnitude.
    pub strict: bool,
}

impl NewtonOptions {
    pub fn from_params(p: &Params) -> NewtonOptions {
        NewtonOptions {
            max_iter: p.max_iter,
            tol_res: p.tol_res,
            max_step: None,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Whether the last steps shrank faster than linearly; false on
    /// collapse onto a singular solution.
    pub superlinear: bool,
}

const REL_STEP: f64 = 1e-12;
/// Steps this small relative to `|u|` are rounding noise and say nothing
/// about the convergence rate.
const ROUNDOFF_STEP: f64 = 1e-15;
/// Consecutive non-contracting steps after which strict Newton gives up.
/// Deep in a chart the residual is below tolerance from the start, so the
/// pre-asymptotic phase has to be allowed some room.
const STALL_LIMIT: usize = 12;

/// Minimum-norm least-squares correction for `f + J d = 0`, with rows of
/// `J` scaled to unit length first so that generators vanishing at very
/// different rates are all resolved by the singular-value cutoff.
pub fn gauss_newton_step(f: &[f64], j: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut rows = Vec::with_capacity(j.len());
    let mut rhs = Vec::with_capacity(j.len());
    for (fi, ji) in f.iter().zip(j) {
        let nj = linalg::norm(ji);
        if nj > 1e-300 && nj.is_finite() {
            rows.push(linalg::scale(ji, 1.0 / nj));
            rhs.push(-fi / nj);
        }
    }
    if rows.is_empty() {
        return vec![0.0; n];
    }
    linalg::lstsq(&linalg::from_rows(&rows, n), &rhs, 1e-13)
}

/// Gauss-Newton with minimum-norm least-squares steps.
pub fn newton<F>(eval: F, start: &[f64], opts: NewtonOptions) -> Result<NewtonOutcome, SemiError>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let n = start.len();
    let mut u = start.to_vec();
    let mut steps: Vec<f64> = Vec::new();
    let mut polish = 0;
    let mut slow = 0;
    for it in 0..=opts.max_iter {
        let (f, j) = eval(&u);
        let r = linalg::max_abs(&f);
        if !r.is_finite() {
            break;
        }
        let delta = if r == 0.0 {
            vec![0.0; n]
        } else {
            gauss_newton_step(&f, &j, n)
        };
        let s = linalg::norm(&delta);
        let size = linalg::norm(&u);
        let superlinear = |steps: &[f64], s: f64| match steps.last() {
            None => true,
            Some(&prev) => prev == 0.0 || s <= 0.25 * prev || s <= ROUNDOFF_STEP * size,
        };
        if r <= opts.tol_res {
            if !opts.strict && it == 0 {
                return Ok(NewtonOutcome {
                    point: u,
                    iterations: 0,
                    residual: r,
                    superlinear: true,
                });
            }
            let tiny = s <= REL_STEP * size || s == 0.0;
            let stalled = steps.last().is_some_and(|&prev| s > 0.5 * prev);
            if tiny || (!opts.strict && (stalled || polish >= 10)) {
                let superlinear = tiny && superlinear(&steps, s) || s == 0.0;
                if opts.strict && superlinear && s > 0.0 {
                    // The acceptance test is relative to |u|; a few more
                    // contracting steps resolve coordinates much smaller
                    // than |u| as well.
                    polish_tail(&eval, &mut u, delta, n);
                }
                return Ok(NewtonOutcome {
                    superlinear,
                    point: u,
                    iterations: it,
                    residual: r,
                });
            }
            polish += 1;
            if opts.strict {
                if stalled {
                    slow += 1;
                } else {
                    slow = 0;
                }
                if slow >= STALL_LIMIT {
                    return Err(SemiError::NoConvergence {
                        iterations: it,
                        residual: r,
                    });
                }
            }
        } else if s <= 1e-15 * (size + 1e-300) {
            return Err(SemiError::NoConvergence {
                iterations: it,
                residual: r,
            });
        }
        if it == opts.max_iter {
            return Err(SemiError::NoConvergence {
                iterations: it,
                residual: r,
            });
        }
        let mut step = delta;
        let mut taken = s;
        if let Some(cap) = opts.max_step {
            if s > cap {
                step = linalg::scale(&step, cap / s);
                taken = cap;
            }
        }
        for (a, d) in u.iter_mut().zip(&step) {
            *a += d;
        }
        steps.push(taken);
    }
    Err(SemiError::NoConvergence {
        iterations: opts.max_iter,
        residual: f64::INFINITY,
    })
}

fn polish_tail<F>(eval: &F, u: &mut [f64], mut delta: Vec<f64>, n: usize)
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let mut last = linalg::norm(&delta);
    for _ in 0..3 {
        let trial = linalg::add(u, &delta);
        let (f, j) = eval(&trial);
        if !f.iter().all(|v| v.is_finite()) {
            return;
        }
        u.copy_from_slice(&trial);
        delta = gauss_newton_step(&f, &j, n);
        let s = linalg::norm(&delta);
        if s == 0.0 || s > 0.5 * last {
            return;
        }
        last = s;
    }
}

/// Projects `start` onto the basic set and re-checks its inequalities.
pub fn newton_project(s: &BasicSet, start: &[f64], tol_res: f64, max_iter: usize) -> Result<Vec<f64>, SemiError> {
    Ok(newton_project_outcome(s, start, tol_res, max_iter)?.point)
}

pub fn newton_project_outcome(
    s: &BasicSet,
    start: &[f64],
    tol_res: f64,
    max_iter: usize,
) -> Result<NewtonOutcome, SemiError> {
    check_len(s.ambient_dim, start)?;
    let (eqs, ineqs) = s.compiled();
    let opts = NewtonOptions {
        max_iter,
        tol_res,
        max_step: None,
        strict: false,
    };
    let out = newton(|u| (eqs.residual(u), eqs.jacobian(u)), start, opts)?;
    assert!(out.residual <= tol_res);
    if let Some(g) = ineqs.residual(&out.point).into_iter().find(|g| !(*g > 0.0)) {
        return Err(SemiError::InequalityViolated(g));
    }
    Ok(out)
}

struct LocalPiece {
    eqs: CompiledSystem,
    ineqs: CompiledSystem,
}

/// A stratum in coordinates `u = y - origin`, with the defining polynomials
/// shifted exactly so that tiny offsets keep full relative precision.
pub struct Chart<'a> {
    pub stratum: &'a Stratum,
    pub origin: Vec<f64>,
    pieces: Vec<LocalPiece>,
    excluded: Vec<LocalPiece>,
    degrees: Vec<Vec<u32>>,
    level_offset: Vec<f64>,
}

/// Points whose first-order distance estimate to an exclusion is below this
/// fraction of `|u|` count as lying on it.
const EXCLUSION_REL: f64 = 1e-10;

/// Central difference at 0, shrinking the step from `h0` until the change in
/// `f` is small. Kuo maps can vary on scales far below `|u|` near a fold.
pub fn adaptive_derivative(f: impl Fn(f64) -> Option<f64>, h0: f64, h_min: f64) -> Option<f64> {
    let mut h = h0;
    loop {
        let (a, b) = (f(h)?, f(-h)?);
        if (a - b).abs() <= 1e-3 || h * 0.1 < h_min {
            return Some((a - b) / (2.0 * h));
        }
        h *= 0.1;
    }
}

/// A converged chart sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSample {
    pub offset: Vec<f64>,
    pub tangent: Plane,
    pub piece: usize,
}

impl<'a> Chart<'a> {
    pub fn new(stratum: &'a Stratum, origin: &[f64]) -> Result<Chart<'a>, SemiError> {
        let m = stratum.ambient_dim();
        check_len(m, origin)?;
        let exact: Vec<Rational> = origin.iter().map(|&v| rational_from_f64(v)).collect();
        let shift_piece = |p: &BasicSet| -> Result<LocalPiece, SemiError> {
            let eqs: Vec<Polynomial> = p.equations.iter().map(|q| q.shift(&exact)).collect::<Result<_, _>>()?;
            let ineqs: Vec<Polynomial> = p
                .inequalities
                .iter()
                .map(|q| q.shift(&exact))
                .collect::<Result<_, _>>()?;
            Ok(LocalPiece {
                eqs: CompiledSystem::new(m, &eqs),
                ineqs: CompiledSystem::new(m, &ineqs),
            })
        };
        let pieces = stratum
            .carrier
            .pieces
            .iter()
            .map(shift_piece)
            .collect::<Result<Vec<_>, _>>()?;
        let excluded = stratum
            .exclusions
            .iter()
            .flat_map(|e| &e.pieces)
            .map(shift_piece)
            .collect::<Result<Vec<_>, _>>()?;
        let level_offset = match &stratum.level {
            Some(l) => linalg::sub(origin, &l.base),
            None => vec![0.0; m],
        };
        let degrees = stratum
            .carrier
            .pieces
            .iter()
            .map(|p| p.equations.iter().map(Polynomial::total_degree).collect())
            .collect();
        Ok(Chart {
            stratum,
            origin: origin.to_vec(),
            pieces,
            excluded,
            degrees,
            level_offset,
        })
    }

    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    /// Whether `u` lies on one of the stratum's exclusions, judged relative
    /// to `|u|` so that deep shells are not swamped by absolute tolerances.
    pub fn is_excluded(&self, u: &[f64], params: &Params) -> bool {
        let scale = EXCLUSION_REL * linalg::norm(u);
        self.excluded.iter().any(|p| {
            if p.ineqs.residual(u).iter().any(|&g| g < -params.tol_on) {
                return false;
            }
            let f = p.eqs.residual(u);
            let jac = p.eqs.jacobian(u);
            f.iter().zip(&jac).all(|(&v, row)| {
                let g = linalg::norm(row);
                v == 0.0 || (g > 0.0 && v.abs() <= scale * g)
            })
        })
    }

    /// Tangent of the carrier piece alone (ignores any level constraint).
    fn carrier_tangent(&self, piece: usize, u: &[f64], dim: usize, tol_rank: f64) -> Option<Plane> {
        let jac = self.pieces[piece].eqs.jacobian(u);
        tangent_from_jacobian(&jac, self.origin.len(), dim, tol_rank).ok()
    }

    /// Kuo map of `frame` evaluated with the carrier tangent of dimension
    /// `dim`. The carrier Jacobian is defined off the stratum too, so this is
    /// a smooth extension of the map to a neighborhood. `base_offset` is the
    /// chart origin minus the frame base.
    #[allow(clippy::too_many_arguments)]
    pub fn kuo_extension(
        &self,
        piece: usize,
        u: &[f64],
        frame: &KuoFrame,
        base_offset: &[f64],
        mode: Mode,
        dim: usize,
        tol_rank: f64,
    ) -> Option<f64> {
        let tangent = self.carrier_tangent(piece, u, dim, tol_rank)?;
        let offset = linalg::add(base_offset, u);
        Some(kuo_value(frame, &tangent, &offset, mode, 0.0).0)
    }

    /// Ambient gradient of [`Chart::kuo_extension`] by central differences
    /// with an adaptive step.
    #[allow(clippy::too_many_arguments)]
    pub fn kuo_extension_gradient(
        &self,
        piece: usize,
        u: &[f64],
        frame: &KuoFrame,
        base_offset: &[f64],
        mode: Mode,
        dim: usize,
        tol_rank: f64,
    ) -> Option<Vec<f64>> {
        let scale = linalg::norm(&linalg::add(base_offset, u)).max(1e-300);
        (0..u.len())
            .map(|k| {
                let at = |h: f64| {
                    let mut v = u.to_vec();
                    v[k] += h;
                    self.kuo_extension(piece, &v, frame, base_offset, mode, dim, tol_rank)
                };
                adaptive_derivative(at, 1e-6 * scale, 1e-14 * scale)
            })
            .collect()
    }

    fn level_at(&self, piece: usize, u: &[f64], tol_rank: f64) -> Option<f64> {
        let level = self.stratum.level.as_ref()?;
        self.kuo_extension(
            piece,
            u,
            &level.frame(),
            &self.level_offset,
            level.mode,
            level.parent_dim,
            tol_rank,
        )
    }

    /// Value of the Kuo map defining the level constraint at `u`.
    pub fn level_value(&self, u: &[f64]) -> Option<f64> {
        (0..self.pieces.len()).find_map(|k| self.level_at(k, u, 1e-8))
    }

    fn level_gradient(&self, piece: usize, u: &[f64], tol_rank: f64) -> Option<Vec<f64>> {
        let level = self.stratum.level.as_ref()?;
        self.kuo_extension_gradient(
            piece,
            u,
            &level.frame(),
            &self.level_offset,
            level.mode,
            level.parent_dim,
            tol_rank,
        )
    }

    /// Residual and Jacobian of the local system, with the level row scaled
    /// so that `tol_level` maps onto `tol_res`.
    fn system(&self, piece: usize, u: &[f64], params: &Params) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = &self.pieces[piece];
        let mut f = p.eqs.residual(u);
        let mut j = p.eqs.jacobian(u);
        if let Some(level) = &self.stratum.level {
            let w = params.tol_res / params.tol_level;
            match (
                self.level_at(piece, u, params.tol_rank),
                self.level_gradient(piece, u, params.tol_rank),
            ) {
                (Some(v), Some(g)) => {
                    f.push(w * (v - level.value));
                    j.push(linalg::scale(&g, w));
                }
                _ => {
                    f.push(f64::NAN);
                    j.push(vec![0.0; u.len()]);
                }
            }
        }
        (f, j)
    }

    /// Tangent plane of the stratum at `u`, or `None` on rank mismatch.
    pub fn tangent(&self, piece: usize, u: &[f64], tol_rank: f64) -> Option<Plane> {
        let m = u.len();
        let mut jac = self.pieces[piece].eqs.jacobian(u);
        if self.stratum.level.is_some() {
            jac.push(self.level_gradient(piece, u, tol_rank)?);
        }
        tangent_from_jacobian(&jac, m, self.stratum.dim, tol_rank).ok()
    }

    pub fn inequalities_hold(&self, piece: usize, u: &[f64]) -> bool {
        self.pieces[piece].ineqs.residual(u).iter().all(|g| *g > 0.0)
    }

    fn degrees(&self, piece: usize) -> &[u32] {
        &self.degrees[piece]
    }

    /// Newton-projects the local seed onto the stratum and validates the
    /// result: superlinear convergence, strict inequalities, full tangent
    /// rank.
    pub fn project(&self, piece: usize, seed: &[f64], max_step: Option<f64>, params: &Params) -> Option<LocalSample> {
        let out = self.solve(piece, seed, max_step, params)?;
        self.finish(piece, out.point, params)
    }

    /// [`Chart::project`] with Newton run in the rescaled coordinates
    /// `v_k = u_k / scale_k`. Seeds lying along a curve `u_k ~ r^{a_k}`
    /// converge far more reliably when the iteration sees every coordinate
    /// at unit size. `max_step` is measured in `v`.
    pub fn project_scaled(
        &self,
        piece: usize,
        seed: &[f64],
        scale: &[f64],
        max_step: Option<f64>,
        params: &Params,
    ) -> Option<LocalSample> {
        if scale.iter().any(|&d| !(d > 0.0)) {
            return None;
        }
        let v0: Vec<f64> = seed.iter().zip(scale).map(|(u, d)| u / d).collect();
        let to_u = |v: &[f64]| -> Vec<f64> { v.iter().zip(scale).map(|(v, d)| v * d).collect() };
        let out = self.solve_with(
            piece,
            |v| {
                let (f, mut j) = self.system(piece, &to_u(v), params);
                for row in &mut j {
                    for (e, d) in row.iter_mut().zip(scale) {
                        *e *= d;
                    }
                }
                (f, j)
            },
            &v0,
            max_step,
            params,
        )?;
        self.finish(piece, to_u(&out.point), params)
    }

    fn finish(&self, piece: usize, u: Vec<f64>, params: &Params) -> Option<LocalSample> {
        if !self.inequalities_hold(piece, &u) || self.is_excluded(&u, params) {
            return None;
        }
        let tangent = self.tangent(piece, &u, params.tol_rank)?;
        Some(LocalSample {
            offset: u,
            tangent,
            piece,
        })
    }

    fn solve(&self, piece: usize, seed: &[f64], max_step: Option<f64>, params: &Params) -> Option<NewtonOutcome> {
        self.solve_with(piece, |u| self.system(piece, u, params), seed, max_step, params)
    }

    fn solve_with<F>(
        &self,
        piece: usize,
        eval: F,
        seed: &[f64],
        max_step: Option<f64>,
        params: &Params,
    ) -> Option<NewtonOutcome>
    where
        F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
    {
        let m = seed.len();
        let n_eq = self.degrees(piece).len();
        let (fixed, codim) = match self.stratum.level {
            Some(_) => (vec![n_eq], (m - self.stratum.dim).max(1)),
            None => (Vec::new(), m - self.stratum.dim),
        };
        let opts = NewtonOptions {
            max_iter: params.max_iter.min(60),
            tol_res: params.tol_res,
            max_step,
            strict: true,
        };
        let mut degrees = self.degrees(piece).to_vec();
        degrees.extend(fixed.iter().map(|_| 0));
        subset_newton(eval, &degrees, &fixed, codim, seed, opts)
    }

    /// Projection without the tangent-rank check; falls back to a plain
    /// Gauss-Newton solve. Used for points of lower-dimensional strata,
    /// whose defining systems are often non-reduced.
    pub fn project_loose(&self, piece: usize, seed: &[f64], params: &Params) -> Option<Vec<f64>> {
        if let Some(out) = self.solve(piece, seed, None, params) {
            if self.inequalities_hold(piece, &out.point) {
                return Some(out.point);
            }
        }
        let opts = NewtonOptions {
            max_iter: params.max_iter,
            tol_res: params.tol_res,
            max_step: None,
            strict: false,
        };
        let out = newton(|u| self.system(piece, u, params), seed, opts).ok()?;
        self.inequalities_hold(piece, &out.point).then_some(out.point)
    }
}

/// Row subsets of size `c` drawn from `free`, lowest total degree first.
fn row_subsets(free: &[usize], degrees: &[u32], c: usize, limit: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = combinations(free.len(), c)
        .into_iter()
        .map(|s| s.into_iter().map(|k| free[k]).collect())
        .collect();
    all.sort_by_key(|s: &Vec<usize>| (s.iter().map(|&i| degrees[i]).sum::<u32>(), s.clone()));
    all.truncate(limit);
    all
}

/// Newton on a subset of `codim` rows (always including `fixed`), accepted
/// only if it converges superlinearly and the full system is also solved.
///
/// Non-reduced generators such as squares slow Newton to a linear rate and
/// drag iterates toward deeper singular points. A subset of low-degree
/// generators of the right size usually avoids them. The full system is
/// considered solved when its residual is below `tol_res` and its own
/// least-squares correction is negligible relative to `|u|`, which stays
/// meaningful at tiny offsets where residuals are small anyway.
fn subset_newton<F>(
    eval: F,
    degrees: &[u32],
    fixed: &[usize],
    codim: usize,
    seed: &[f64],
    opts: NewtonOptions,
) -> Option<NewtonOutcome>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let n = seed.len();
    let n_rows = degrees.len();
    if codim == 0 || codim > n_rows || codim < fixed.len() {
        return None;
    }
    let free: Vec<usize> = (0..n_rows).filter(|i| !fixed.contains(i)).collect();
    let (_, j0) = eval(seed);
    for subset in row_subsets(&free, degrees, codim - fixed.len(), SUBSET_LIMIT) {
        let rows: Vec<usize> = fixed.iter().chain(&subset).copied().collect();
        let picked: Vec<Vec<f64>> = rows.iter().map(|&i| j0[i].clone()).collect();
        if equilibrated_rank(&picked, n, 1e-6).0 < rows.len() {
            continue;
        }
        let restricted = |u: &[f64]| {
            let (f, j) = eval(u);
            (
                rows.iter().map(|&i| f[i]).collect::<Vec<f64>>(),
                rows.iter().map(|&i| j[i].clone()).collect::<Vec<Vec<f64>>>(),
            )
        };
        let Ok(out) = newton(restricted, seed, opts) else {
            continue;
        };
        if !out.superlinear {
            continue;
        }
        let (f, j) = eval(&out.point);
        if !(linalg::max_abs(&f) <= opts.tol_res) {
            continue;
        }
        let correction = linalg::norm(&gauss_newton_step(&f, &j, n));
        if correction <= 1e-8 * linalg::norm(&out.point).max(1e-300) || correction == 0.0 {
            return Some(out);
        }
    }
    None
}

const SUBSET_LIMIT: usize = 12;

/// Direction restriction for shell probing: `(u/|u|) . v > 1 - delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    pub direction: Vec<f64>,
    pub delta: f64,
}

impl Cone {
    pub fn contains(&self, u: &[f64]) -> bool {
        let n = linalg::norm(u);
        n > 0.0 && linalg::dot(u, &self.direction) / n > 1.0 - self.delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellSamples {
    pub radii: Vec<f64>,
    pub shells: Vec<Vec<LocalSample>>,
}

impl ShellSamples {
    pub fn empty_shells(&self) -> Vec<usize> {
        (0..self.shells.len()).filter(|&k| self.shells[k].is_empty()).collect()
    }
}

pub fn random_unit(rng: &mut rng::Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return linalg::scale(&v, 1.0 / n);
        }
    }
}

/// Random unit vector in the cone around `c.direction` (which is unit).
fn random_in_cone(rng: &mut rng::Rng, c: &Cone) -> Vec<f64> {
    let m = c.direction.len();
    let theta_max = (1.0 - c.delta).clamp(-1.0, 1.0).acos();
    let w = random_unit(rng, m);
    let perp = linalg::sub(&w, &linalg::scale(&c.direction, linalg::dot(&w, &c.direction)));
    let np = linalg::norm(&perp);
    if np < 1e-12 {
        return c.direction.clone();
    }
    let theta = theta_max * rng.random::<f64>().sqrt();
    linalg::add(
        &linalg::scale(&c.direction, theta.cos()),
        &linalg::scale(&perp, theta.sin() / np),
    )
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Samples the stratum on shells `|y - x| in [r_k/2, 2 r_k]`.
///
/// Each shell draws seeds `x + r_k w` with `w` uniform on the sphere (or in
/// the cone) and Newton-projects them in the chart at `x`. Shells are
/// independent random streams, so the result does not depend on whether
/// they run in parallel. Samples in each shell are sorted lexicographically.
pub fn sample_shells(
    j: &Stratum,
    x: &[f64],
    radii: &[f64],
    probes_per_shell: usize,
    cone: Option<&Cone>,
    seed: u64,
    params: &Params,
) -> Result<ShellSamples, SemiError> {
    sample_shells_with(j, x, radii, probes_per_shell, cone, 0, seed, params)
}

/// Exponent vectors in `{1, .., 4}^m` with at least one entry equal to 1.
pub fn weight_vectors(m: usize) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let total = 4usize.pow(m as u32);
    for code in 0..total {
        let mut c = code;
        let w: Vec<i32> = (0..m)
            .map(|_| {
                let d = (c % 4) as i32 + 1;
                c /= 4;
                d
            })
            .collect();
        if w.contains(&1) {
            out.push(w);
        }
    }
    out
}

/// [`sample_shells`] plus the stratum's own seed points that fall in a
/// shell's band, plus `weighted` extra seeds per shell of the form
/// `(s_k r^{a_k})` in ambient coordinates, rescaled to length `r`, cycling
/// through the exponent vectors `a` in a per-shell random order.
///
/// Approach curves `u_k ~ r^{a_k}` are where limits of tangent planes
/// usually differ from the generic direction (thin wedges near folds and
/// near a stratum's own tangent cone). Uniform seeds hit such regions with
/// probability shrinking like a power of `r`; weighted seeds keep hitting
/// them on every shell. Newton runs in coordinates scaled by `r^{a_k}` so
/// that it sees every coordinate at unit size.
#[allow(clippy::too_many_arguments)]
pub fn sample_shells_with(
    j: &Stratum,
    x: &[f64],
    radii: &[f64],
    probes_per_shell: usize,
    cone: Option<&Cone>,
    weighted: usize,
    seed: u64,
    params: &Params,
) -> Result<ShellSamples, SemiError> {
    let chart = Chart::new(j, x)?;
    let m = x.len();
    let weights = weight_vectors(m);
    let shells = exec::par_map(radii, params.parallel, |k, &r| {
        let mut out = Vec::new();
        if chart.num_pieces() == 0 {
            return out;
        }
        let accept = |s: Option<LocalSample>, out: &mut Vec<LocalSample>| {
            if let Some(s) = s {
                let d = linalg::norm(&s.offset);
                let in_band = d >= 0.5 * r && d <= 2.0 * r;
                let in_cone = cone.is_none_or(|c| c.contains(&s.offset));
                if in_band && in_cone {
                    out.push(s);
                }
            }
        };
        let mut rng = rng::stream(seed, "shell", k as u64);
        let mut uniform = Vec::new();
        for a in 0..probes_per_shell * 4 {
            if uniform.len() >= probes_per_shell {
                break;
            }
            let w = match cone {
                Some(c) => random_in_cone(&mut rng, c),
                None => random_unit(&mut rng, m),
            };
            let piece = a % chart.num_pieces();
            accept(
                chart.project(piece, &linalg::scale(&w, r), Some(r), params),
                &mut uniform,
            );
        }
        out.extend(uniform);
        for (i, p) in j.seed_points.iter().enumerate() {
            let u = linalg::sub(p, x);
            let d = linalg::norm(&u);
            if d >= 0.5 * r && d <= 2.0 * r {
                let piece = i % chart.num_pieces();
                accept(chart.project(piece, &u, Some(0.1 * r), params), &mut out);
            }
        }
        let mut rng = rng::stream(seed, "weighted-shell", k as u64);
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.shuffle(&mut rng);
        for i in 0..weighted {
            let w = &weights[order[i % order.len()]];
            {
                let raw: Vec<f64> = w.iter().map(|&a| rng.random_range(-1.0..1.0) * r.powi(a)).collect();
                let n = linalg::norm(&raw);
                if n == 0.0 {
                    continue;
                }
                let start = linalg::scale(&raw, r / n);
                if cone.is_some_and(|c| !c.contains(&start)) {
                    continue;
                }
                let scale: Vec<f64> = w.iter().map(|&a| r.powi(a) * r / n).collect();
                let piece = i % chart.num_pieces();
                let sample = chart.project_scaled(piece, &start, &scale, Some(1.0), params);
                accept(sample, &mut out);
            }
        }
        out.sort_by(|a, b| lex_cmp(&a.offset, &b.offset));
        out.dedup_by(|a, b| linalg::dist(&a.offset, &b.offset) <= 1e-12 * r);
        out
    });
    Ok(ShellSamples {
        radii: radii.to_vec(),
        shells,
    })
}

/// A globally sampled point of a semivariety.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSample {
    pub point: Vec<f64>,
    pub piece: usize,
    pub superlinear: bool,
}

/// Newton-projects `n` uniform seeds from the box `[-R, R]^m` onto each
/// piece. Points that wander outside `1.5 R` are dropped.
///
/// Each seed first tries subset Newton for codimensions in `codims`
/// (lowest first); if none converges superlinearly, a plain Gauss-Newton
/// solve on the whole system is kept as a non-superlinear sample, so that
/// sets whose only points are non-reduced still register as nonempty.
pub fn sample_global(
    s: &Semivariety,
    n: usize,
    seed: u64,
    tag: &str,
    codims: std::ops::RangeInclusive<usize>,
    params: &Params,
) -> Vec<GlobalSample> {
    let m = s.ambient_dim;
    let compiled: Vec<(CompiledSystem, CompiledSystem)> = s.pieces.iter().map(BasicSet::compiled).collect();
    let degrees: Vec<Vec<u32>> = s
        .pieces
        .iter()
        .map(|p| p.equations.iter().map(Polynomial::total_degree).collect())
        .collect();
    if compiled.is_empty() {
        return Vec::new();
    }
    let radius = params.box_radius;
    let found = exec::par_range(n, params.parallel, |i| {
        let mut rng = rng::stream(seed, tag, i as u64);
        let start: Vec<f64> = (0..m).map(|_| rng.random_range(-radius..radius)).collect();
        let piece = i % compiled.len();
        let (eqs, ineqs) = &compiled[piece];
        let eval = |u: &[f64]| (eqs.residual(u), eqs.jacobian(u));
        let strict = NewtonOptions {
            max_iter: params.max_iter.min(60),
            tol_res: params.tol_res,
            max_step: Some(radius),
            strict: true,
        };
        let mut found = codims
            .clone()
            .find_map(|c| subset_newton(eval, &degrees[piece], &[], c, &start, strict));
        if found.is_none() {
            let loose = NewtonOptions {
                strict: false,
                max_iter: params.max_iter,
                ..strict
            };
            found = newton(eval, &start, loose).ok().map(|mut o| {
                o.superlinear = false;
                o
            });
        }
        let out = found?;
        if linalg::norm(&out.point) > 1.5 * radius * (m as f64).sqrt() {
            return None;
        }
        if ineqs.residual(&out.point).iter().any(|g| !(*g > params.tol_on)) {
            return None;
        }
        Some(GlobalSample {
            point: out.point,
            piece,
            superlinear: out.superlinear,
        })
    });
    found.into_iter().flatten().collect()
}

/// Numerical dimension at a point: `m - rank` of the row-equilibrated
/// Jacobian.
pub fn local_dim(piece: &CompiledSystem, point: &[f64], tol_rank: f64) -> usize {
    let m = point.len();
    m - equilibrated_rank(&piece.jacobian(point), m, tol_rank).0
}

/// Majority vote of local dimensions over samples; superlinearly converged
/// samples are preferred when any exist.
pub fn vote_dim(s: &Semivariety, samples: &[GlobalSample], tol_rank: f64) -> Result<usize, SemiError> {
    if samples.is_empty() {
        return Err(SemiError::NoSamples);
    }
    let compiled: Vec<CompiledSystem> = s
        .pieces
        .iter()
        .map(|p| CompiledSystem::new(s.ambient_dim, &p.equations))
        .collect();
    let good: Vec<&GlobalSample> = samples.iter().filter(|g| g.superlinear).collect();
    let pool: Vec<&GlobalSample> = if good.is_empty() {
        samples.iter().collect()
    } else {
        good
    };
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for g in &pool {
        *votes
            .entry(local_dim(&compiled[g.piece], &g.point, tol_rank))
            .or_default() += 1;
    }
    let (&best, &count) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap();
    if (count as f64) < 0.6 * pool.len() as f64 {
        return Err(SemiError::AmbiguousRank(votes.into_iter().collect()));
    }
    Ok(best)
}

pub fn estimate_dim(s: &Semivariety, n_probe: usize, seed: u64, params: &Params) -> Result<usize, SemiError> {
    let samples = sample_global(s, n_probe, seed, "estimate-dim", 1..=s.ambient_dim, params);
    vote_dim(s, &samples, params.tol_rank)
}

/// `{equations} + all (m-d) minors of the Jacobian`, piece by piece.
/// Pieces whose minors include a nonzero constant are dropped as empty.
pub fn singular_locus(s: &Semivariety, d: usize) -> Result<Semivariety, SemiError> {
    let m = s.ambient_dim;
    if d > m {
        return Err(SemiError::DimOutOfRange { dim: d, ambient: m });
    }
    let mut pieces = Vec::new();
    for piece in &s.pieces {
        let codim = m - d;
        if codim == 0 {
            continue;
        }
        if piece.equations.len() < codim {
            return Err(SemiError::DimOutOfRange { dim: d, ambient: m });
        }
        let jac = jacobian(&piece.equations)?;
        let mut eqs = piece.equations.clone();
        let mut contradictory = false;
        for q in minors(&jac, codim)? {
            if q.is_zero() {
                continue;
            }
            if q.is_nonzero_constant() {
                contradictory = true;
                break;
            }
            if !eqs.iter().any(|e| *e == q || *e == -&q) {
                eqs.push(q);
            }
        }
        if !contradictory && !pinned_at_origin_inconsistent(&eqs, m) {
            pieces.push(BasicSet::new(eqs, piece.inequalities.clone(), m)?);
        }
    }
    Ok(Semivariety { pieces, ambient_dim: m })
}

/// True when single-term equations force every variable to zero and some
/// other equation does not vanish at the origin, so the system has no
/// real (or complex) solution.
fn pinned_at_origin_inconsistent(eqs: &[Polynomial], m: usize) -> bool {
    let mut pinned = vec![false; m];
    for e in eqs {
        if e.num_terms() == 1 {
            let (mono, _) = e.terms().next().expect("one term");
            let vars: Vec<usize> = (0..m).filter(|&k| mono.0[k] > 0).collect();
            if let [k] = vars[..] {
                pinned[k] = true;
            }
        }
    }
    if m == 0 || !pinned.iter().all(|&p| p) {
        return false;
    }
    let origin = vec![Rational::from_integer(0.into()); m];
    eqs.iter().any(|e| {
        e.eval_exact(&origin)
            .is_ok_and(|v| v != Rational::from_integer(0.into()))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiltrationLevel {
    pub dim: usize,
    pub set: Semivariety,
    /// Superlinearly converged samples when available.
    pub samples: Vec<Vec<f64>>,
}

/// Nested levels in increasing dimension; the last one is the input set.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    pub levels: Vec<FiltrationLevel>,
}

/// Iterates singular loci until the dimension reaches 0 or the locus has
/// no real points.
pub fn filtrate(v: &Semivariety, declared_dim: Option<usize>, params: &Params) -> Result<Filtration, SemiError> {
    let mut levels = Vec::new();
    let mut cur = v.clone();
    let m = v.ambient_dim;
    let first_codims = match declared_dim {
        Some(d) => m - d.min(m)..=m - d.min(m),
        None => 1..=m,
    };
    let mut samples = sample_global(&cur, params.n_probe, params.seed, "filtration-0", first_codims, params);
    let mut d = match declared_dim {
        Some(d) => d,
        None => vote_dim(&cur, &samples, params.tol_rank)?,
    };
    for round in 1.. {
        levels.push(FiltrationLevel {
            dim: d,
            set: cur.clone(),
            samples: preferred_points(&samples),
        });
        if d == 0 {
            break;
        }
        let next = singular_locus(&cur, d)?;
        let tag = format!("filtration-{round}");
        let next_samples = sample_global(&next, params.n_probe, params.seed, &tag, m - d + 1..=m, params);
        if next_samples.is_empty() {
            break;
        }
        let nd = vote_dim(&next, &next_samples, params.tol_rank)?;
        if nd >= d {
            return Err(SemiError::NonDecreasing { from: d, to: nd });
        }
        cur = next;
        samples = next_samples;
        d = nd;
    }
    levels.reverse();
    Ok(Filtration { levels })
}

fn preferred_points(samples: &[GlobalSample]) -> Vec<Vec<f64>> {
    let good: Vec<Vec<f64>> = samples
        .iter()
        .filter(|g| g.superlinear)
        .map(|g| g.point.clone())
        .collect();
    if good.is_empty() {
        samples.iter().map(|g| g.point.clone()).collect()
    } else {
        good
    }
}

/// A connected piece of the big stratum inside a small ball around `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalComponent {
    pub base_point: Vec<f64>,
    pub radius: f64,
    pub member_samples: Vec<Vec<f64>>,
    pub essential: bool,
}

/// Distance from `u` to the small stratum's tangent plane, which stands in
/// for the small stratum itself at the scales involved.
fn off_small(small: &Plane, u: &[f64]) -> f64 {
    linalg::norm(&normal_part(small, u))
}

/// Smallest distance from the segment `[a, b]` to the small plane.
fn segment_off_small(small: &Plane, a: &[f64], b: &[f64]) -> f64 {
    let na = normal_part(small, a);
    let nd = normal_part(small, &linalg::sub(b, a));
    let dd = linalg::dot(&nd, &nd);
    let t = if dd > 0.0 {
        (-linalg::dot(&na, &nd) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    linalg::norm(&linalg::add(&na, &linalg::scale(&nd, t)))
}

/// Whether two chart samples are joined by a short on-stratum path: the
/// chord is subdivided into steps of at most `max_step`, every node is
/// Newton-corrected onto the stratum, and the corrected path must stay
/// close to the chord and clear of the small stratum.
fn joined(chart: &Chart, small: &Plane, p: &[f64], q: &[f64], max_step: f64, params: &Params) -> bool {
    let gap = linalg::dist(p, q);
    if gap == 0.0 {
        return true;
    }
    let clearance = 0.1 * linalg::norm(p).min(linalg::norm(q));
    let n = ((gap / max_step).ceil() as usize).clamp(2, 64);
    let tangent_at = |u: &[f64]| (0..chart.num_pieces()).find_map(|piece| chart.tangent(piece, u, params.tol_rank));
    let (Some(mut prev_t), Some(last_t)) = (tangent_at(p), tangent_at(q)) else {
        return false;
    };
    let mut prev = p.to_vec();
    for k in 1..n {
        let t = k as f64 / n as f64;
        let z: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect();
        let hit = (0..chart.num_pieces()).find_map(|piece| chart.project(piece, &z, Some(0.5 * gap), params));
        let Some(y) = hit else {
            return false;
        };
        if linalg::dist(&y.offset, &z) > 0.25 * gap
            || segment_off_small(small, &prev, &y.offset) < clearance
            || linalg::dist(&y.offset, &prev) > 0.6 * gap
            || plane_distance(&prev_t, &y.tangent) > 0.5
        {
            return false;
        }
        prev = y.offset;
        prev_t = y.tangent;
    }
    linalg::dist(&prev, q) <= 0.6 * gap
        && segment_off_small(small, &prev, q) >= clearance
        && plane_distance(&prev_t, &last_t) <= 0.5
}

/// Connected components of chart samples under [`joined`].
///
/// Samples hugging the small stratum (closer than a tenth of their distance
/// to the base point) carry no reliable connectivity and get no label, and
/// neither do samples left in tiny fragments.
/// Candidate edges go to the `k` nearest samples no farther apart than the
/// larger of the two distances to the base point.
pub fn component_labels(
    chart: &Chart,
    small: &Plane,
    offsets: &[Vec<f64>],
    max_step: f64,
    params: &Params,
) -> Vec<Option<usize>> {
    const K: usize = 10;
    let n = offsets.len();
    let usable: Vec<bool> = offsets
        .iter()
        .map(|u| off_small(small, u) >= 0.1 * linalg::norm(u))
        .collect();
    let mut candidates = Vec::new();
    for a in 0..n {
        if !usable[a] {
            continue;
        }
        let reach = linalg::norm(&offsets[a]);
        let mut near: Vec<(f64, usize)> = (0..n)
            .filter(|&b| b != a && usable[b])
            .map(|b| (linalg::dist(&offsets[a], &offsets[b]), b))
            .filter(|&(d, b)| d <= reach.max(linalg::norm(&offsets[b])))
            .collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(_, b) in near.iter().take(K) {
            let e = (a.min(b), a.max(b));
            candidates.push(e);
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    let ok = exec::par_map(&candidates, params.parallel, |_, &(a, b)| {
        let step = max_step.min(linalg::dist(&offsets[a], &offsets[b]) / 4.0);
        joined(chart, small, &offsets[a], &offsets[b], step, params)
    });
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    for (&(a, b), &good) in candidates.iter().zip(&ok) {
        if good {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let roots: Vec<Option<usize>> = (0..n).map(|a| usable[a].then(|| find(&mut parent, a))).collect();
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for r in roots.iter().flatten() {
        *sizes.entry(*r).or_default() += 1;
    }
    // Fragments of a couple of samples are gaps in the sample graph rather
    // than components of the set.
    let n_usable = usable.iter().filter(|&&u| u).count();
    let min_size = (n_usable / 50).max(3);
    let mut names: BTreeMap<usize, usize> = BTreeMap::new();
    roots
        .into_iter()
        .map(|r| {
            let r = r.filter(|r| sizes[r] >= min_size)?;
            let next = names.len();
            Some(*names.entry(r).or_insert(next))
        })
        .collect()
}

/// Unit directions of the grid `{-1, 0, 1}^s \ {0}` in the small plane.
fn grid_directions(small: &Plane) -> Vec<Vec<f64>> {
    let s = small.dim();
    let m = small.ambient_dim();
    let mut out = Vec::new();
    for code in 0..3usize.pow(s as u32) {
        let mut c = code;
        let mut v = vec![0.0; m];
        for t in 0..s {
            let w = (c % 3) as f64 - 1.0;
            c /= 3;
            v = linalg::add(&v, &linalg::scale(&small.basis_vector(t), w));
        }
        let n = linalg::norm(&v);
        if n > 0.0 {
            out.push(linalg::scale(&v, 1.0 / n));
        }
    }
    out
}

/// Whether the samples of one component accumulate on every grid
/// direction of the small stratum around the base point, i.e. whether the
/// component's closure contains a full neighborhood of `x` in `V_i`.
/// A point stratum has the trivial neighborhood, so every component is
/// essential over it.
pub fn is_essential(small: &Plane, members: &[Vec<f64>]) -> bool {
    grid_directions(small).iter().all(|d| {
        members.iter().any(|u| {
            let n = linalg::norm(u);
            n > 0.0 && linalg::dist(&linalg::scale(u, 1.0 / n), d) <= 0.6
        })
    })
}

/// Local connected components of `j` in the ball of the given radius
/// around `x`, with `small` the tangent plane of the small stratum at `x`.
#[allow(clippy::too_many_arguments)]
pub fn local_components(
    j: &Stratum,
    small: &Plane,
    x: &[f64],
    radius: f64,
    n_samples: usize,
    seed: u64,
    params: &Params,
) -> Result<Vec<LocalComponent>, SemiError> {
    const SHELLS: usize = 6;
    let radii: Vec<f64> = (0..SHELLS).map(|k| 0.5 * radius * 0.5f64.powi(k as i32)).collect();
    let per_shell = n_samples.div_ceil(SHELLS).max(1);
    let shells = sample_shells_with(j, x, &radii, per_shell, None, per_shell, seed, params)?;
    let offsets: Vec<Vec<f64>> = shells
        .shells
        .iter()
        .flatten()
        .map(|s| s.offset.clone())
        .filter(|u| linalg::norm(u) <= radius)
        .collect();
    if offsets.is_empty() {
        return Err(SemiError::EmptyBall);
    }
    let chart = Chart::new(j, x)?;
    let labels = component_labels(&chart, small, &offsets, radius / 20.0, params);
    Ok(group_components(x, radius, small, &offsets, &labels))
}

pub fn group_components(
    x: &[f64],
    radius: f64,
    small: &Plane,
    offsets: &[Vec<f64>],
    labels: &[Option<usize>],
) -> Vec<LocalComponent> {
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    (0..count)
        .map(|c| {
            let members: Vec<Vec<f64>> = offsets
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == Some(c))
                .map(|(u, _)| u.clone())
                .collect();
            LocalComponent {
                base_point: x.to_vec(),
                radius,
                essential: is_essential(small, &members),
                member_samples: members.iter().map(|u| linalg::add(x, u)).collect(),
            }
        })
        .collect()
}
