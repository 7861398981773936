//! Random task levels and their conversion for the brute-force oracle.

use hid_core::tasks::AffineTaskSet;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle::OracleLevel;
use super::{random_matrix, random_vector};

pub fn level(a: DMatrix<f64>, a0: DVector<f64>, b: DMatrix<f64>, b0: DVector<f64>) -> AffineTaskSet {
    let d = a.ncols().max(b.ncols());
    let mut out = AffineTaskSet::empty(d);
    if b.nrows() > 0 {
        out.append(AffineTaskSet::equality("eq", b, b0, 1.0));
    }
    if a.nrows() > 0 {
        out.append(AffineTaskSet::inequality("ineq", a, a0, 1.0));
    }
    out
}

pub fn to_oracle(l: &AffineTaskSet) -> OracleLevel {
    let scale = |m: &DMatrix<f64>, w: &DVector<f64>| {
        let mut m = m.clone();
        for (i, wi) in w.iter().enumerate() {
            m.row_mut(i).scale_mut(*wi);
        }
        m
    };
    OracleLevel {
        a: scale(&l.ineq_matrix, &l.ineq_weights),
        a0: l.ineq_vector.component_mul(&l.ineq_weights),
        b: scale(&l.eq_matrix, &l.eq_weights),
        b0: l.eq_vector.component_mul(&l.eq_weights),
    }
}

/// Random level with occasionally rank-deficient or conflicting rows.
pub fn random_level(
    rng: &mut ChaCha8Rng,
    d: usize,
    eq: std::ops::RangeInclusive<usize>,
    ineq: std::ops::RangeInclusive<usize>,
) -> AffineTaskSet {
    let eq = rng.gen_range(eq);
    let ineq = rng.gen_range(ineq);
    let mut b = random_matrix(eq, d, rng, 1.0);
    let b0 = random_vector(eq, rng, 1.0);
    if eq >= 2 && rng.gen_bool(0.3) {
        // Duplicate direction with a different target: inconsistent.
        let row = b.row(0).into_owned();
        b.row_mut(1).copy_from(&row);
    }
    let mut a = random_matrix(ineq, d, rng, 1.0);
    let mut a0 = random_vector(ineq, rng, 1.0);
    if ineq >= 2 && rng.gen_bool(0.4) {
        // Opposite half-spaces that cannot both hold.
        let row = a.row(0).into_owned();
        a.row_mut(1).copy_from(&(-row));
        a0[0] = rng.gen_range(0.2..1.0);
        a0[1] = rng.gen_range(0.2..1.0);
    }
    level(a, a0, b, b0)
}
