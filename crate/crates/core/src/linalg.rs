//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Singular values (descending) and the full set of right singular vectors.
pub struct FullSvd {
    pub values: Vec<f64>,
    /// `n x n`, column `k` pairs with `values[k]`; columns past
    /// `values.len()` span the null space padding.
    pub v: DMatrix<f64>,
}

pub fn full_svd(a: &DMatrix<f64>) -> FullSvd {
    let n = a.ncols();
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    if n == 0 {
        return FullSvd {
            values: Vec::new(),
            v: DMatrix::zeros(0, 0),
        };
    }
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let v = DMatrix::from_fn(n, n, |r, c| vt[(order[c], r)]);
    let keep = a.nrows().min(n);
    FullSvd {
        values: values[..keep].to_vec(),
        v,
    }
}

/// Rank by relative threshold `sigma_k > tol * sigma_1`.
pub fn relative_rank(values: &[f64], tol: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > tol * top).count()
}

/// Orthonormal basis (as columns) of the span of the trailing right
/// singular vectors, i.e. the numerical null space for the given rank.
pub fn null_space(svd: &FullSvd, rank: usize) -> DMatrix<f64> {
    let n = svd.v.nrows();
    svd.v.columns(rank, n - rank).into_owned()
}

/// Minimum-norm least-squares solution of `a x = b`, dropping singular
/// values below `tol * sigma_1`.
pub fn lstsq(a: &DMatrix<f64>, b: &[f64], tol: f64) -> Vec<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return vec![0.0; n];
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("U");
    let vt = svd.v_t.as_ref().expect("V^T");
    let top = svd.singular_values.max();
    let bv = DVector::from_column_slice(b);
    let mut x = DVector::zeros(n);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if top <= 0.0 || s <= tol * top {
            continue;
        }
        let coef = u.column(k).dot(&bv) / s;
        x += vt.row(k).transpose() * coef;
    }
    x.iter().copied().collect()
}

/// Orthonormal basis for the column span of `a` (assumed full column rank),
/// sign-normalized so the QR factor has a positive diagonal.
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    q.columns(0, a.ncols()).into_owned()
}

/// Orthonormal basis of the orthogonal complement of the column span of an
/// orthonormal `basis`.
pub fn complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let m = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::identity(m, m);
    }
    let svd = full_svd(&basis.transpose());
    null_space(&svd, k)
}

pub fn column(a: &DMatrix<f64>, j: usize) -> Vec<f64> {
    a.column(j).iter().copied().collect()
}
