//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Relative PD threshold: eigenvalues must exceed `PD_REL_TOL * trace / n`.
pub const PD_REL_TOL: f64 = 1e-10;

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

fn pd_threshold(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    PD_REL_TOL * (m.trace().abs() / n)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    min_eigenvalue(m) > pd_threshold(m)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Number of eigenvalues above `tol` in absolute value.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    symmetric_eigenvalues(m).iter().filter(|v| v.abs() > tol).count()
}

/// Dense submatrix with the given (0-based) rows and columns.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// LU determinant; the empty matrix has determinant 1.
pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// Hadamard bound on |det|: product of row Euclidean norms.
pub fn hadamard_bound(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).product()
}
