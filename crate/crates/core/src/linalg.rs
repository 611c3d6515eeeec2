//! Dense complex kernels shared by every estimator update.
//!
//! Matrices are `nalgebra` column-major `DMatrix<Complex64>`. Only the index
//! semantics documented on each function are part of the contract.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Column-wise Kronecker product. Output row `i * b.nrows() + j` holds
/// `a[(i, r)] * b[(j, r)]`, so the first argument varies slowest.
pub fn khatri_rao(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let jb = b.nrows();
    Ok(CMat::from_fn(a.nrows() * jb, a.ncols(), |row, c| {
        a[(row / jb, c)] * b[(row % jb, c)]
    }))
}

/// Standard Kronecker product with `a` selecting the block.
pub fn kronecker(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Minimizer of `‖w − X·b‖²_F + τ‖X − x0‖²_F`, i.e.
/// `(τ·x0 + w·bᴴ)(b·bᴴ + τI)⁻¹`, computed with a Cholesky solve of the
/// Hermitian Gram matrix.
pub fn regularized_rows_solve(w: &CMat, b: &CMat, x0: &CMat, tau: f64) -> Result<CMat> {
    if w.ncols() != b.ncols() || x0.nrows() != w.nrows() || x0.ncols() != b.nrows() {
        return Err(Error::Dimension(format!(
            "regularized solve: w {}x{}, b {}x{}, x0 {}x{}",
            w.nrows(),
            w.ncols(),
            b.nrows(),
            b.ncols(),
            x0.nrows(),
            x0.ncols()
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::Dimension(format!("tau must be non-negative, got {tau}")));
    }
    let bh = b.adjoint();
    let mut gram = b * &bh;
    for i in 0..gram.nrows() {
        gram[(i, i)] += C64::new(tau, 0.0);
    }
    let rhs = x0 * C64::new(tau, 0.0) + w * &bh;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("b·bᴴ + τI is not positive definite".into()))?;
    // G Xᴴ = RHSᴴ because G is Hermitian.
    let xh = chol.solve(&rhs.adjoint());
    let x = xh.adjoint();
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular("regularized solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Solves the Hermitian positive-definite system `g·x = rhs`.
pub fn hpd_solve(g: CMat, rhs: &CMat) -> Result<CMat> {
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// Economy SVD with singular values sorted in descending order.
pub fn sorted_svd(m: &CMat) -> (CMat, Vec<f64>, CMat) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = CMat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_sorted = CMat::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)].conj());
    (u_sorted, s, v_sorted)
}

/// The `r` dominant left singular vectors of `m`, ordered by descending
/// singular value.
pub fn truncated_left_singular(m: &CMat, r: usize) -> Result<CMat> {
    let available = m.nrows().min(m.ncols());
    if r > available {
        return Err(Error::RankTooLarge { requested: r, available });
    }
    let (u, _, _) = sorted_svd(m);
    Ok(u.columns(0, r).into_owned())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Left pseudo-inverse solution `x = argmin ‖a·x − b‖` for full column rank `a`.
pub fn least_squares(a: &CMat, b: &CMat) -> Result<CMat> {
    let ah = a.adjoint();
    hpd_solve(&ah * a, &(ah * b))
        .map_err(|_| Error::RankDeficient(format!("{}x{} design matrix", a.nrows(), a.ncols())))
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest principal angle (radians) between the column spaces of two
/// matrices with orthonormal columns.
pub fn max_principal_angle(q1: &CMat, q2: &CMat) -> f64 {
    // sin of the largest angle is the spectral norm of q2's residual off span(q1);
    // this stays accurate for tiny angles where acos of the cosines does not.
    let resid = q2 - q1 * (q1.adjoint() * q2);
    let (_, s, _) = sorted_svd(&resid);
    s.first().copied().unwrap_or(0.0).min(1.0).asin()
}
