//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Everything routes through QR, Cholesky, or symmetric eigendecompositions;
//! no explicit matrix inverse of a design-sized object is ever formed. Rank
//! decisions use a relative singular-value cutoff so they are insensitive to
//! the overall scaling of the data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value tolerance used for all rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Singular values of a rectangular matrix, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().svd(false, false).singular_values
}

/// Numerical rank given singular values and a relative tolerance.
pub fn rank_from_singular_values(s: &DVector<f64>, rel_tol: f64) -> usize {
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Numerical rank of `a` at the crate-wide tolerance.
pub fn rank(a: &DMatrix<f64>) -> usize {
    rank_from_singular_values(&singular_values(a), RANK_TOL)
}

/// Thin QR factorization `a = q r` with `q` of shape n×k and `r` k×k upper
/// triangular (requires n ≥ k).
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

/// Least-squares solve of `a x = b` for tall full-column-rank `a` via QR.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (q, r) = thin_qr(a);
    let qtb = q.transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("singular triangular factor in least-squares solve".into()))
}

/// Solve `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| Error::Numerical("matrix not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Solve `a X = B` column-wise for symmetric positive definite `a`.
pub fn solve_spd_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| Error::Numerical("matrix not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Symmetrize in place: `(a + a') / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let at = a.transpose();
    *a += at;
    *a *= 0.5;
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix via its
/// eigendecomposition, treating eigenvalues below `rel_tol * λ_max` as zero.
/// Returns the pseudo-inverse and the retained rank.
pub fn sym_pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let k = a.nrows();
    let mut pinv = DMatrix::zeros(k, k);
    let mut kept = 0usize;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lmax > 0.0 && lam.abs() > rel_tol * lmax {
            let u = eig.eigenvectors.column(i);
            pinv += u * u.transpose() / lam;
            kept += 1;
        }
    }
    (pinv, kept)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse symmetric square root of a symmetric positive definite matrix.
pub fn inv_sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let k = a.nrows();
    let mut out = DMatrix::zeros(k, k);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= RANK_TOL * lmax {
            return Err(Error::Numerical(
                "matrix not positive definite in inverse square root".into(),
            ));
        }
        let u = eig.eigenvectors.column(i);
        out += u * u.transpose() / lam.sqrt();
    }
    Ok(out)
}
