//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition sorted ascending.
pub fn sym_eigen_sorted(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Smallest eigenvalue of a small symmetric matrix.
pub fn sym_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a small symmetric matrix.
pub fn sym_max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Orthonormal basis (w.r.t. the weighted inner product diag(w)) of the
/// column span of `a`, via Cholesky-free modified Gram-Schmidt run twice.
pub fn weighted_orthonormalize(a: &DMatrix<f64>, w: &[f64], rank_tol: f64) -> DMatrix<f64> {
    let ip = |x: &DVector<f64>, y: &DVector<f64>| -> f64 {
        x.iter().zip(y.iter()).zip(w).map(|((a, b), c)| a * b * c).sum()
    };
    let scale = (0..a.ncols())
        .map(|j| ip(&a.column(j).into_owned(), &a.column(j).into_owned()).sqrt())
        .fold(0.0, f64::max);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for q in &cols {
                let c = ip(q, &v);
                v -= q * c;
            }
        }
        let nv = ip(&v, &v).sqrt();
        if nv > rank_tol * scale && nv > 0.0 {
            cols.push(v / nv);
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(a.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Largest principal angle (radians) between two subspaces given by
/// bases orthonormal in the weighted inner product diag(w).
pub fn max_principal_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>, w: &[f64]) -> f64 {
    if q1.ncols() != q2.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if q1.ncols() == 0 {
        return 0.0;
    }
    let wq2 = DMatrix::from_fn(q2.nrows(), q2.ncols(), |i, j| q2[(i, j)] * w[i]);
    let c = q1.transpose() * wq2;
    // sin of the largest angle = norm of the part of q2 outside span(q1).
    let r = q2 - q1 * c;
    let sr = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] * w[i].sqrt());
    let s = sr.singular_values().iter().cloned().fold(0.0, f64::max);
    s.min(1.0).asin()
}

/// Solves the SPD system (a + mu I) x = b for several right-hand sides.
/// Returns None if the Cholesky factorization fails.
pub fn spd_solve(a: &DMatrix<f64>, mu: f64, b: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += mu;
    }
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let cond = if n == 0 { 1.0 } else { (hi / lo).powi(2) };
    Some((chol.solve(b), cond))
}
