//! Brute-force lexicographic least-squares oracle.
//!
//! Each level minimizes `‖max(Ay + a, 0)‖² + ‖By + b‖²` over the optimal set
//! of the levels above, `{B_i y + b_i = w_i*, A_i y + a_i ≤ v_i*}`. The
//! minimum is found by enumerating, for every soft row, whether it is
//! positive (penalized), exactly zero, or negative (ignored), and for every
//! cap whether it is tight, then solving the resulting equality-constrained
//! least-squares problem for its minimum-norm solution and keeping the best
//! candidate that is consistent with its sign pattern.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct OracleLevel {
    pub a: DMatrix<f64>,
    pub a0: DVector<f64>,
    pub b: DMatrix<f64>,
    pub b0: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub objectives: Vec<f64>,
    pub y: DVector<f64>,
}

/// Nullspace by eigen-decomposition of `EᵀE`, independent of the SVD path
/// used by the library.
fn nullspace_eig(e: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    if e.nrows() == 0 {
        return DMatrix::identity(d, d);
    }
    let gram = e.transpose() * e;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let cols: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] <= 1e-12 * top.max(1e-300)).collect();
    let mut out = DMatrix::zeros(d, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        out.set_column(k, &eig.eigenvectors.column(i));
    }
    out
}

/// Minimum-norm least squares through the eigen-decomposition of the normal
/// equations, again avoiding the library's SVD.
fn lstsq(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let d = m.ncols();
    if m.nrows() == 0 {
        return DVector::zeros(d);
    }
    let eig = (m.transpose() * m).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let g = m.transpose() * rhs;
    let mut x = DVector::zeros(d);
    for i in 0..d {
        let lambda = eig.eigenvalues[i];
        if lambda > 1e-12 * top.max(1e-300) {
            let v = eig.eigenvectors.column(i);
            x += v * (v.dot(&g) / lambda);
        }
    }
    x
}

/// `min ‖M y + c‖²  s.t.  E y + e = 0`, minimum norm; `None` if the
/// equalities are inconsistent.
fn constrained_lstsq(
    m: &DMatrix<f64>,
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    e0: &DVector<f64>,
    d: usize,
) -> Option<DVector<f64>> {
    let y_p = if e.nrows() == 0 { DVector::zeros(d) } else { lstsq(e, &(-e0)) };
    if e.nrows() > 0 && (e * &y_p + e0).amax() > 1e-8 * (1.0 + e0.amax()) {
        return None;
    }
    let n = nullspace_eig(e, d);
    if n.ncols() == 0 {
        return Some(y_p);
    }
    let s = lstsq(&(m * &n), &(-(m * &y_p + c)));
    Some(y_p + n * s)
}

fn rows_of(m: &DMatrix<f64>, v: &DVector<f64>, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let mut out = DMatrix::zeros(idx.len(), m.ncols());
    let mut vec = DVector::zeros(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).copy_from(&m.row(i));
        vec[k] = v[i];
    }
    (out, vec)
}

fn stack(parts: &[(DMatrix<f64>, DVector<f64>)], d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows: usize = parts.iter().map(|p| p.0.nrows()).sum();
    let mut m = DMatrix::zeros(rows, d);
    let mut v = DVector::zeros(rows);
    let mut at = 0;
    for (pm, pv) in parts {
        m.rows_mut(at, pm.nrows()).copy_from(pm);
        v.rows_mut(at, pv.len()).copy_from(pv);
        at += pm.nrows();
    }
    (m, v)
}

pub fn level_objective(level: &OracleLevel, y: &DVector<f64>) -> f64 {
    let v = (&level.a * y + &level.a0).map(|r| r.max(0.0));
    let w = &level.b * y + &level.b0;
    v.norm_squared() + w.norm_squared()
}

pub fn solve(levels: &[OracleLevel], d: usize) -> OracleResult {
    // Optimal-set description of the levels solved so far.
    let mut eq = (DMatrix::zeros(0, d), DVector::zeros(0));
    let mut caps = (DMatrix::zeros(0, d), DVector::zeros(0));
    let mut objectives = Vec::new();
    let mut y = DVector::zeros(d);
    for level in levels {
        let m = level.a.nrows();
        let k = caps.0.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let soft_patterns = 3usize.pow(m as u32);
        for pattern in 0..soft_patterns {
            let mut positive = Vec::new();
            let mut zero = Vec::new();
            let mut negative = Vec::new();
            let mut code = pattern;
            for i in 0..m {
                match code % 3 {
                    0 => positive.push(i),
                    1 => zero.push(i),
                    _ => negative.push(i),
                }
                code /= 3;
            }
            for cap_mask in 0u32..(1 << k) {
                let tight: Vec<usize> = (0..k).filter(|i| cap_mask & (1 << i) != 0).collect();
                let (mp, cp) = rows_of(&level.a, &level.a0, &positive);
                let (objective_m, objective_c) = stack(&[(mp, cp), (level.b.clone(), level.b0.clone())], d);
                let (ez, ez0) = rows_of(&level.a, &level.a0, &zero);
                let (ct, ct0) = rows_of(&caps.0, &(-&caps.1), &tight);
                let (e, e0) = stack(&[eq.clone(), (ez, ez0), (ct, ct0)], d);
                let Some(cand) = constrained_lstsq(&objective_m, &objective_c, &e, &e0, d) else {
                    continue;
                };
                let vals = &level.a * &cand + &level.a0;
                let scale = 1e-9 * (1.0 + vals.amax());
                if positive.iter().any(|&i| vals[i] < -scale) || negative.iter().any(|&i| vals[i] > scale) {
                    continue;
                }
                if k > 0 && (&caps.0 * &cand - &caps.1).max() > 1e-9 * (1.0 + caps.1.amax()) {
                    continue;
                }
                let f = level_objective(level, &cand);
                if best.as_ref().is_none_or(|(b, _)| f < *b) {
                    best = Some((f, cand));
                }
            }
        }
        let (f, cand) = best.expect("oracle found no candidate");
        objectives.push(f);
        // Extend the optimal-set description with this level.
        let w = &level.b * &cand + &level.b0;
        eq = stack(&[eq, (level.b.clone(), &level.b0 - w)], d);
        let v = (&level.a * &cand + &level.a0).map(|r| r.max(0.0));
        caps = stack(&[caps, (level.a.clone(), v - &level.a0)], d);
        y = cand;
    }
    OracleResult { objectives, y }
}
