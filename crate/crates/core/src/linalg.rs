//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &Vector, b: &Vector) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Mean of the selected rows, summed in the order given.
pub fn mean_of<'a, I>(points: &'a [Vector], idx: I, dim: usize) -> Vector
where
    I: IntoIterator<Item = &'a usize>,
{
    let mut acc = Vector::zeros(dim);
    let mut count = 0usize;
    for &i in idx {
        acc += &points[i];
        count += 1;
    }
    if count > 0 {
        acc /= count as f64;
    }
    acc
}

/// Stack row vectors into an `m x d` matrix.
pub fn rows_to_matrix(rows: &[Vector]) -> Matrix {
    let m = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    Matrix::from_fn(m, d, |i, j| rows[i][j])
}

pub fn matrix_to_rows(mat: &Matrix) -> Vec<Vector> {
    (0..mat.nrows())
        .map(|i| mat.row(i).transpose().into_owned())
        .collect()
}

/// Largest singular value.
pub fn spectral_norm(mat: &Matrix) -> f64 {
    if mat.is_empty() {
        return 0.0;
    }
    mat.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(sym: &Matrix) -> f64 {
    sym.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum-norm solution of `a x = b` for symmetric PSD `a`, via the
/// pseudo-inverse with a relative cutoff on the eigenvalues.
pub fn psd_min_norm_solve(a: &Matrix, b: &Vector) -> Vector {
    let eig = a.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = scale * 1e-12;
    let coeffs = eig.eigenvectors.transpose() * b;
    let mut x = Vector::zeros(b.len());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff {
            x += eig.eigenvectors.column(k) * (coeffs[k] / lam);
        }
    }
    x
}

/// Solve a symmetric positive definite system, falling back to the
/// minimum-norm pseudo-solution when Cholesky fails.
pub fn spd_solve(a: &Matrix, b: &Vector) -> Vector {
    match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => psd_min_norm_solve(a, b),
    }
}
