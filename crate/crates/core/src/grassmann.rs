//! Planes in R^m: tangent spaces, subspace distance, normal projection,
//! orientation and the Rolle transversality scan.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg;
use crate::polycore::{CompiledSystem, Polynomial};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrassError {
    #[error("expected tangent dimension {expected}, observed {observed}")]
    RankMismatch { expected: usize, observed: usize },
    #[error("residual {0:e} too large for a tangent computation")]
    ResidualTooLarge(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("plane is not transversal (|det| = {0:e})")]
    NotTransversal(f64),
    #[error("path is discontinuous between samples {index} and {next} (distance {dist:.3})", next = index + 1)]
    DiscontinuousPath { index: usize, dist: f64 },
    #[error("planes are not distinct (distance {0:e})")]
    NotDistinct(f64),
    #[error("no separating transversal plane after {0} trials")]
    Exhausted(usize),
}

/// A linear subspace stored as an orthonormal basis (columns of `basis`).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    basis: DMatrix<f64>,
}

impl serde::Serialize for Plane {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        self.columns().serialize(ser)
    }
}

impl Plane {
    /// Orthonormalizes the given columns, which must be independent.
    pub fn from_columns(cols: &[Vec<f64>], ambient_dim: usize) -> Plane {
        if cols.is_empty() {
            return Plane::zero(ambient_dim);
        }
        let a = DMatrix::from_fn(ambient_dim, cols.len(), |i, j| cols[j][i]);
        Plane {
            basis: linalg::orthonormalize(&a),
        }
    }

    /// Wraps an already orthonormal basis.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Plane {
        Plane { basis }
    }

    pub fn zero(ambient_dim: usize) -> Plane {
        Plane {
            basis: DMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn whole(ambient_dim: usize) -> Plane {
        Plane {
            basis: DMatrix::identity(ambient_dim, ambient_dim),
        }
    }

    pub fn coordinate(ambient_dim: usize, axes: &[usize]) -> Plane {
        let cols: Vec<Vec<f64>> = axes
            .iter()
            .map(|&a| {
                let mut v = vec![0.0; ambient_dim];
                v[a] = 1.0;
                v
            })
            .collect();
        Plane::from_columns(&cols, ambient_dim)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Basis vectors in column order.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|j| self.basis_vector(j)).collect()
    }

    pub fn basis_vector(&self, j: usize) -> Vec<f64> {
        linalg::column(&self.basis, j)
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for j in 0..self.dim() {
            let c = self.basis.column(j);
            let coef: f64 = c.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, a) in out.iter_mut().zip(c.iter()) {
                *o += coef * a;
            }
        }
        out
    }

    pub fn complement(&self) -> Plane {
        Plane {
            basis: linalg::complement(&self.basis),
        }
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        linalg::norm(&linalg::sub(v, &self.project(v))) <= tol * linalg::norm(v).max(1.0)
    }
}

/// Point on a stratum with its tangent and normal spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSample {
    pub point: Vec<f64>,
    pub tangent: Plane,
    pub normal: Plane,
}

impl TangentSample {
    pub fn new(point: Vec<f64>, tangent: Plane) -> TangentSample {
        let normal = tangent.complement();
        TangentSample { point, tangent, normal }
    }
}

/// Tangent space from Jacobian rows, with each nonzero row scaled to unit
/// length first. Scaling leaves the row space unchanged and keeps the rank
/// decision meaningful when generators vanish to different orders.
pub fn tangent_from_jacobian(
    rows: &[Vec<f64>],
    ambient_dim: usize,
    expected_dim: usize,
    tol_rank: f64,
) -> Result<Plane, GrassError> {
    let (observed, svd) = equilibrated_rank(rows, ambient_dim, tol_rank);
    let observed_dim = ambient_dim - observed;
    if observed_dim != expected_dim {
        return Err(GrassError::RankMismatch {
            expected: expected_dim,
            observed: observed_dim,
        });
    }
    match svd {
        Some(svd) => Ok(Plane::from_orthonormal(linalg::null_space(&svd, observed))),
        None => Ok(Plane::whole(ambient_dim)),
    }
}

/// Numerical rank of the row-equilibrated Jacobian.
pub fn equilibrated_rank(rows: &[Vec<f64>], ambient_dim: usize, tol_rank: f64) -> (usize, Option<linalg::FullSvd>) {
    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .filter_map(|r| {
            let n = linalg::norm(r);
            (n > 1e-300 && n.is_finite()).then(|| linalg::scale(r, 1.0 / n))
        })
        .collect();
    if scaled.is_empty() {
        return (0, None);
    }
    let svd = linalg::full_svd(&linalg::from_rows(&scaled, ambient_dim));
    (linalg::relative_rank(&svd.values, tol_rank), Some(svd))
}

/// Tangent sample of `{system = 0}` at `y`.
pub fn tangent_basis(
    system: &[Polynomial],
    y: &[f64],
    expected_dim: usize,
    tol_rank: f64,
    tol_on: f64,
) -> Result<TangentSample, GrassError> {
    let m = y.len();
    if system.iter().any(|p| p.num_vars() != m) {
        return Err(GrassError::DimensionMismatch(format!("point has length {m}")));
    }
    let compiled = CompiledSystem::new(m, system);
    let res = linalg::max_abs(&compiled.residual(y));
    if res > tol_on {
        return Err(GrassError::ResidualTooLarge(res));
    }
    let plane = tangent_from_jacobian(&compiled.jacobian(y), m, expected_dim, tol_rank)?;
    Ok(TangentSample::new(y.to_vec(), plane))
}

/// Operator norm of the difference of orthogonal projectors.
pub fn grass_dist(p: &Plane, q: &Plane) -> Result<f64, GrassError> {
    if p.ambient_dim() != q.ambient_dim() || p.dim() != q.dim() {
        return Err(GrassError::DimensionMismatch(format!(
            "{}-plane in R^{} vs {}-plane in R^{}",
            p.dim(),
            p.ambient_dim(),
            q.dim(),
            q.ambient_dim()
        )));
    }
    Ok(plane_distance(p, q))
}

pub(crate) fn plane_distance(p: &Plane, q: &Plane) -> f64 {
    if p.dim() == 0 || p.dim() == p.ambient_dim() {
        return 0.0;
    }
    // The difference of two projectors is symmetric with eigenvalues
    // +-sin(theta_k); its norm is the largest singular value.
    let d = p.projector() - q.projector();
    let sv = d.singular_values();
    sv.max().clamp(0.0, 1.0)
}

/// Component of `v` in the normal space of the sample.
pub fn project_normal(t: &TangentSample, v: &[f64]) -> Vec<f64> {
    linalg::sub(v, &t.tangent.project(v))
}

/// Component of `v` normal to `tangent`.
pub fn normal_part(tangent: &Plane, v: &[f64]) -> Vec<f64> {
    linalg::sub(v, &tangent.project(v))
}

/// A plane with a chosen ordered basis; the orientation is the class of
/// that basis under positive-determinant changes.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPlane {
    frame: DMatrix<f64>,
}

impl OrientedPlane {
    /// Orthonormalizes `frame` with Gram-Schmidt, which preserves the
    /// orientation of the given ordered basis.
    pub fn from_frame(cols: &[Vec<f64>], ambient_dim: usize) -> OrientedPlane {
        OrientedPlane {
            frame: Plane::from_columns(cols, ambient_dim).basis,
        }
    }

    pub fn from_plane(plane: &Plane) -> OrientedPlane {
        OrientedPlane {
            frame: plane.basis.clone(),
        }
    }

    pub fn plane(&self) -> Plane {
        Plane {
            basis: self.frame.clone(),
        }
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.nrows()
    }

    pub fn flipped(&self) -> OrientedPlane {
        let mut frame = self.frame.clone();
        if frame.ncols() > 0 {
            let c = -frame.column(0);
            frame.set_column(0, &c);
        }
        OrientedPlane { frame }
    }
}

/// `det[basis(t) | basis(l)]`.
pub fn orientation_det(t: &OrientedPlane, l: &OrientedPlane) -> Result<f64, GrassError> {
    let m = t.ambient_dim();
    if l.ambient_dim() != m || t.dim() + l.dim() != m {
        return Err(GrassError::DimensionMismatch(format!(
            "{} + {} != {}",
            t.dim(),
            l.dim(),
            m
        )));
    }
    let mut a = DMatrix::zeros(m, m);
    a.columns_mut(0, t.dim()).copy_from(&t.frame);
    a.columns_mut(t.dim(), l.dim()).copy_from(&l.frame);
    Ok(a.determinant())
}

/// Whether `l` separates `t0` and `t1`: the orientations of `t0 + l` and
/// `t1 + l` differ.
pub fn separates(l: &OrientedPlane, t0: &OrientedPlane, t1: &OrientedPlane, tol_det: f64) -> Result<bool, GrassError> {
    let d0 = orientation_det(t0, l)?;
    let d1 = orientation_det(t1, l)?;
    for d in [d0, d1] {
        if d.abs() <= tol_det {
            return Err(GrassError::NotTransversal(d.abs()));
        }
    }
    Ok(d0.signum() != d1.signum())
}

/// Transports orientation along a path of planes by choosing, at each step,
/// the basis whose transition from the previous one has positive
/// determinant.
pub fn transport_orientation(path: &[Plane], start: &OrientedPlane) -> Result<Vec<OrientedPlane>, GrassError> {
    let mut out: Vec<OrientedPlane> = Vec::with_capacity(path.len());
    for (i, p) in path.iter().enumerate() {
        let mut cur = OrientedPlane::from_plane(p);
        let prev = if i == 0 { start } else { &out[i - 1] };
        if i > 0 {
            let dist = plane_distance(&path[i - 1], p);
            if dist >= 0.5 {
                return Err(GrassError::DiscontinuousPath { index: i - 1, dist });
            }
        }
        if cur.dim() > 0 {
            let transition = prev.frame.transpose() * &cur.frame;
            if transition.determinant() < 0.0 {
                cur = cur.flipped();
            }
        }
        out.push(cur);
    }
    Ok(out)
}

/// First index along the path where `det[tau_t | l]` changes sign or drops
/// to `tol_det` in magnitude.
pub fn rolle_scan(path: &[TangentSample], l: &OrientedPlane, tol_det: f64) -> Result<Option<usize>, GrassError> {
    let Some(first) = path.first() else {
        return Ok(None);
    };
    let planes: Vec<Plane> = path.iter().map(|t| t.tangent.clone()).collect();
    let oriented = transport_orientation(&planes, &OrientedPlane::from_plane(&first.tangent))?;
    rolle_scan_oriented(&oriented, l, tol_det)
}

pub fn rolle_scan_oriented(
    path: &[OrientedPlane],
    l: &OrientedPlane,
    tol_det: f64,
) -> Result<Option<usize>, GrassError> {
    let mut first_sign = 0.0;
    for (i, t) in path.iter().enumerate() {
        let d = orientation_det(t, l)?;
        if d.abs() < tol_det {
            return Ok(Some(i));
        }
        if i == 0 {
            first_sign = d.signum();
        } else if d.signum() != first_sign {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Uniformly random oriented `k`-plane in R^m.
pub fn random_oriented_plane(rng: &mut rng::Rng, m: usize, k: usize) -> OrientedPlane {
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    OrientedPlane::from_frame(&cols, m)
}

/// Random `(m-k)`-plane separating `t0` and `t1` and transversal to every
/// tangent plane in `avoid`.
pub fn random_separating_plane(
    t0: &OrientedPlane,
    t1: &OrientedPlane,
    avoid: &[Plane],
    n_trials: usize,
    seed: u64,
    tol_grass: f64,
    tol_det: f64,
) -> Result<(OrientedPlane, usize), GrassError> {
    let d = grass_dist(&t0.plane(), &t1.plane())?;
    if d <= tol_grass {
        return Err(GrassError::NotDistinct(d));
    }
    let m = t0.ambient_dim();
    let k = t0.dim();
    for trial in 0..n_trials {
        let mut r = rng::stream(seed, "separating-plane", trial as u64);
        let l = random_oriented_plane(&mut r, m, m - k);
        let Ok(true) = separates(&l, t0, t1, tol_det) else {
            continue;
        };
        if avoid.iter().all(|t| transversal(t, &l.plane(), tol_det)) {
            return Ok((l, trial + 1));
        }
    }
    Err(GrassError::Exhausted(n_trials))
}

/// Whether `t + l` spans the ambient space with smallest singular value of
/// the combined frame above `tol`.
pub fn transversal(t: &Plane, l: &Plane, tol: f64) -> bool {
    let m = t.ambient_dim();
    if t.dim() + l.dim() < m {
        return false;
    }
    let mut a = DMatrix::zeros(m, t.dim() + l.dim());
    a.columns_mut(0, t.dim()).copy_from(&t.basis);
    a.columns_mut(t.dim(), l.dim()).copy_from(&l.basis);
    let sv = a.singular_values();
    let mut v: Vec<f64> = sv.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v.get(m - 1).copied().unwrap_or(0.0) > tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polycore::parse_poly;

    fn vars3() -> Vec<String> {
        ["x", "y", "z"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sphere_tangent_at_pole() {
        let p = parse_poly("x^2 + y^2 + z^2 - 1", &vars3()).unwrap();
        let t = tangent_basis(&[p], &[0.0, 0.0, 1.0], 2, 1e-8, 1e-9).unwrap();
        let expected = Plane::coordinate(3, &[0, 1]);
        assert!(grass_dist(&t.tangent, &expected).unwrap() < 1e-12);
        assert_eq!(t.normal.dim(), 1);
    }

    #[test]
    fn cone_tangent_and_apex() {
        let p = parse_poly("x^2 + y^2 - z^2", &vars3()).unwrap();
        let t = tangent_basis(std::slice::from_ref(&p), &[1.0, 0.0, 1.0], 2, 1e-8, 1e-9).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expected = Plane::from_columns(&[vec![0.0, 1.0, 0.0], vec![s, 0.0, s]], 3);
        assert!(grass_dist(&t.tangent, &expected).unwrap() < 1e-12);
        assert_eq!(
            tangent_basis(&[p], &[0.0, 0.0, 0.0], 2, 1e-8, 1e-9),
            Err(GrassError::RankMismatch {
                expected: 2,
                observed: 3
            })
        );
    }

    #[test]
    fn distance_examples() {
        let x = Plane::coordinate(2, &[0]);
        let y = Plane::coordinate(2, &[1]);
        assert!((grass_dist(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(grass_dist(&x, &x).unwrap(), 0.0);
        let xy = Plane::coordinate(3, &[0, 1]);
        let xz = Plane::coordinate(3, &[0, 2]);
        assert!((grass_dist(&xy, &xz).unwrap() - 1.0).abs() < 1e-12);
        assert!(grass_dist(&x, &xy).is_err());
    }

    #[test]
    fn normal_projection_examples() {
        let t = TangentSample::new(vec![0.0; 3], Plane::coordinate(3, &[0, 1]));
        let s = 1.0 / 2f64.sqrt();
        let n = project_normal(&t, &[0.0, s, s]);
        assert!(n[0].abs() < 1e-15 && n[1].abs() < 1e-15 && (n[2] - s).abs() < 1e-15);
        assert!(linalg::norm(&project_normal(&t, &[1.0, 0.0, 0.0])) < 1e-15);
        assert_eq!(project_normal(&t, &[0.0, 0.0, 1.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn separation_examples() {
        let t0 = OrientedPlane::from_frame(&[vec![1.0, 0.0]], 2);
        let t1 = OrientedPlane::from_frame(&[vec![0.0, 1.0]], 2);
        let l = OrientedPlane::from_frame(&[vec![1.0, 1.0]], 2);
        assert!(separates(&l, &t0, &t1, 1e-10).unwrap());
        let l2 = OrientedPlane::from_frame(&[vec![1.0, -1.0]], 2);
        assert!(!separates(&l2, &t0, &t1, 1e-10).unwrap());
        assert!(!separates(&l, &t0, &t0, 1e-10).unwrap());
        assert!(matches!(
            separates(&t0, &t0, &t1, 1e-10),
            Err(GrassError::NotTransversal(_))
        ));
    }

    #[test]
    fn rolle_scan_on_rotating_line() {
        use std::f64::consts::FRAC_PI_2;
        let path: Vec<TangentSample> = (0..=100)
            .map(|i| {
                let t = i as f64 / 100.0;
                let dir = vec![(t * FRAC_PI_2).cos(), (t * FRAC_PI_2).sin()];
                TangentSample::new(vec![0.0, 0.0], Plane::from_columns(&[dir], 2))
            })
            .collect();
        let l = OrientedPlane::from_frame(&[vec![1.0, 1.0]], 2);
        let idx = rolle_scan(&path, &l, 1e-10).unwrap().unwrap();
        assert!((49..=51).contains(&idx), "index {idx}");
        let constant = vec![path[0].clone(); 20];
        assert_eq!(rolle_scan(&constant, &l, 1e-10).unwrap(), None);
    }

    #[test]
    fn discontinuous_paths_are_rejected() {
        let path = vec![
            TangentSample::new(vec![0.0; 2], Plane::coordinate(2, &[0])),
            TangentSample::new(vec![0.0; 2], Plane::coordinate(2, &[1])),
        ];
        let l = OrientedPlane::from_frame(&[vec![1.0, 1.0]], 2);
        assert!(matches!(
            rolle_scan(&path, &l, 1e-10),
            Err(GrassError::DiscontinuousPath { index: 0, .. })
        ));
    }

    #[test]
    fn separating_plane_for_axes() {
        let t0 = OrientedPlane::from_frame(&[vec![1.0, 0.0]], 2);
        let t1 = OrientedPlane::from_frame(&[vec![0.0, 1.0]], 2);
        let (l, trials) = random_separating_plane(&t0, &t1, &[], 64, 3, 1e-6, 1e-10).unwrap();
        assert!(trials <= 64);
        assert!(separates(&l, &t0, &t1, 1e-10).unwrap());
        assert!(matches!(
            random_separating_plane(&t0, &t0, &[], 10, 0, 1e-6, 1e-10),
            Err(GrassError::NotDistinct(_))
        ));
    }
}
