//! Small dense helpers: orthonormal DCT, Procrustes rotation, unitarity.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{MarsError, Result};

/// Orthonormal 1D DCT-II matrix, rows indexed by frequency.
pub fn dct1_matrix(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |k, i| {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        scale * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

/// Orthonormal separable 2D DCT-II acting on row-major vectorized
/// `patch_h x patch_w` patches: `C_h kron C_w`.
pub fn dct2_matrix(patch_h: usize, patch_w: usize) -> DMatrix<f64> {
    dct1_matrix(patch_h).kronecker(&dct1_matrix(patch_w))
}

/// `||Q^T Q - I||_F`.
pub fn unitarity_error(q: &DMatrix<f64>) -> f64 {
    let mut g = q.tr_mul(q);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// Unitary maximizer of `tr(Q M^T)` over all unitary `Q`.
///
/// For `M = U S V^T` this is the orthogonal polar factor `U V^T`. Any valid
/// SVD gives the same objective value; the factor is unique only when `M` is
/// invertible.
pub fn procrustes_rotation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(MarsError::Contract(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MarsError::Numeric("SVD input contains non-finite entries".into()));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| MarsError::Numeric("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| MarsError::Numeric("SVD returned no U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| MarsError::Numeric("SVD returned no V".into()))?;
    Ok(u * v_t)
}

/// `tr(A B^T)` without forming the product.
pub fn trace_abt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}
