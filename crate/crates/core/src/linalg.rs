//! Singular value decomposition with nalgebra types.
//!
//! nalgebra 0.35 returns wrong singular values for some rank-deficient
//! matrices whenever singular vectors are requested, so the factorization
//! goes through faer.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = U·diag(σ)·Vᵀ` with `σ` in decreasing order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

/// `None` only if the iteration fails to converge, e.g. on non-finite input.
pub fn svd(m: &DMatrix<f64>) -> Option<Svd> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Some(Svd {
            u: DMatrix::zeros(r, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, c),
        });
    }
    let f = Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let s = f.thin_svd().ok()?;
    let (u, sigma, v) = (s.U(), s.S().column_vector(), s.V());
    Some(Svd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| sigma[i]),
        v_t: DMatrix::from_fn(k, c, |i, j| v[(j, i)]),
    })
}

impl Svd {
    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `threshold`.
    pub fn rank(&self, threshold: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > threshold).count()
    }

    /// Minimum-norm least-squares solution of `m x = b`, treating singular
    /// values at or below `threshold` as zero.
    pub fn solve(&self, b: &DVector<f64>, threshold: f64) -> DVector<f64> {
        let mut coeffs = self.u.tr_mul(b);
        for (c, &s) in coeffs.iter_mut().zip(self.singular_values.iter()) {
            *c = if s > threshold { *c / s } else { 0.0 };
        }
        self.v_t.tr_mul(&coeffs)
    }
}

/// Minimum-norm least-squares solution of `m x = b` with singular values
/// below `rel_tol·σ_max` dropped.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Option<DVector<f64>> {
    let s = svd(m)?;
    let threshold = rel_tol * s.max_singular_value();
    Some(s.solve(b, threshold))
}
