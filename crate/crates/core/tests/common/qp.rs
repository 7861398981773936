//! Exhaustive active-set enumeration for small QPs.

use hid_core::qpcore::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{random_matrix, random_vector};

/// Best objective over the equality-constrained minimizers of every subset of
/// inequalities treated as equalities.
pub fn enumeration_oracle(qp: &QuadraticProgram) -> Option<(f64, DVector<f64>)> {
    let d = qp.dim();
    let m = qp.ineq_rhs.len();
    let e = qp.eq_rhs.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = e + rows.len();
        if k > d {
            continue;
        }
        let mut kkt = DMatrix::zeros(d + k, d + k);
        let mut rhs = DVector::zeros(d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&qp.hessian);
        rhs.rows_mut(0, d).copy_from(&(-&qp.gradient));
        for r in 0..e {
            let row = qp.eq_matrix.row(r);
            kkt.view_mut((d + r, 0), (1, d)).copy_from(&row);
            kkt.view_mut((0, d + r), (d, 1)).copy_from(&row.transpose());
            rhs[d + r] = qp.eq_rhs[r];
        }
        for (s, &i) in rows.iter().enumerate() {
            let row = qp.ineq_matrix.row(i);
            kkt.view_mut((d + e + s, 0), (1, d)).copy_from(&row);
            kkt.view_mut((0, d + e + s), (d, 1)).copy_from(&row.transpose());
            rhs[d + e + s] = qp.ineq_rhs[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, d).into_owned();
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        if (&qp.eq_matrix * &x - &qp.eq_rhs).amax() > 1e-9 {
            continue;
        }
        if m > 0 && (&qp.ineq_matrix * &x - &qp.ineq_rhs).max() > 1e-9 {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| f < *b) {
            best = Some((f, x));
        }
    }
    best
}

pub fn random_qp(rng: &mut rand_chacha::ChaCha8Rng, with_eq: bool) -> QuadraticProgram {
    let d = rng.gen_range(1..=6);
    let m = rng.gen_range(0..=6);
    let a = random_matrix(d, d, rng, 1.0);
    let h = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
    let g = random_vector(d, rng, 2.0);
    let c = random_matrix(m, d, rng, 1.0);
    // Feasible by construction around a random point.
    let anchor = random_vector(d, rng, 1.0);
    let margin = DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
    let b = &c * &anchor + margin;
    let mut qp = QuadraticProgram::unconstrained(h, g).with_ineq(c, b);
    if with_eq && d > 1 {
        let k = rng.gen_range(1..d);
        let e = random_matrix(k, d, rng, 1.0);
        let rhs = &e * &anchor;
        qp = qp.with_eq(e, rhs);
    }
    qp
}
