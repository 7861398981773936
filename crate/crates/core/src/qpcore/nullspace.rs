use nalgebra::DMatrix;

/// Orthonormal basis of the nullspace of a matrix.
#[derive(Clone, Debug)]
pub struct NullspaceBasis {
    pub basis: DMatrix<f64>,
    pub rank: usize,
    /// Absolute singular-value threshold that decided the rank.
    pub tolerance: f64,
}

/// Relative rank tolerance used when callers have no better choice.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;

/// Nullspace of the `k×d` matrix `b` by singular value decomposition.
///
/// Singular values above `tolerance·σ_max` count toward the rank. A matrix
/// without rows, or one that is identically zero, yields the identity.
pub fn nullspace_basis(b: &DMatrix<f64>, tolerance: f64) -> NullspaceBasis {
    let d = b.ncols();
    assert!(d >= 1, "nullspace of a matrix without columns");
    if b.nrows() == 0 || b.amax() == 0.0 {
        return NullspaceBasis {
            basis: DMatrix::identity(d, d),
            rank: 0,
            tolerance: 0.0,
        };
    }
    let svd = crate::linalg::svd(b).expect("SVD of a finite matrix converges");
    let v_t = &svd.v_t;
    let sigma = &svd.singular_values;
    let threshold = tolerance * svd.max_singular_value();
    let range: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] > threshold).collect();
    let rank = range.len();

    // Complete the row space to an orthonormal basis of R^d with the
    // Householder reflections of its QR factorization; the trailing rows of
    // Qᵀ span the nullspace.
    let mut row_space = DMatrix::zeros(d, rank);
    for (col, &i) in range.iter().enumerate() {
        row_space.set_column(col, &v_t.row(i).transpose());
    }
    let mut q_t = DMatrix::identity(d, d);
    if rank > 0 {
        row_space.qr().q_tr_mul(&mut q_t);
    }
    NullspaceBasis {
        rank,
        basis: q_t.rows(rank, d - rank).transpose(),
        tolerance: threshold,
    }
}
