//! Range-space primal active-set iterations.
//!
//! The engine works on `min ½xᵀHx + gᵀx  s.t.  Cx ≤ d` with `H` positive
//! definite, but never touches `H` or `C` directly. Callers hand over the
//! precomputed quantities
//!
//! * `x_unc = −H⁻¹g` (unconstrained minimizer),
//! * `P = H⁻¹Cᵀ` and `T = C H⁻¹ Cᵀ`,
//! * `C x_unc` and `d`,
//!
//! which lets structured problems build them cheaply. With a working set `W`
//! the equality-constrained minimizer is `x_unc − P_W μ` where
//! `T_WW μ = C_W x_unc − d_W`, and `μ` are the Lagrange multipliers.

use nalgebra::{DMatrix, DVector};

pub(crate) struct RangeSpace {
    /// Constraint matrix, used to evaluate `Cx` directly so that primal
    /// feasibility does not inherit the conditioning of `T`.
    pub c: DMatrix<f64>,
    pub x_unc: DVector<f64>,
    pub p: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub c_x_unc: DVector<f64>,
    pub rhs: DVector<f64>,
}

pub(crate) struct CoreResult {
    pub x: DVector<f64>,
    pub cx: DVector<f64>,
    pub working: Vec<usize>,
    /// Multiplier per constraint (zero outside the working set).
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Cholesky factor of `T_WW`, grown one row at a time. Rows of the lower
/// triangle are packed back to back.
struct WorkingFactor {
    packed: Vec<f64>,
    size: usize,
}

impl WorkingFactor {
    fn new() -> Self {
        Self {
            packed: Vec::new(),
            size: 0,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    /// Forward substitution `L y = b` on the leading block.
    fn solve_lower(&self, b: &mut [f64]) {
        for i in 0..self.size {
            let row = self.row(i);
            let s = b[i] - row[..i].iter().zip(&b[..i]).map(|(l, y)| l * y).sum::<f64>();
            b[i] = s / row[i];
        }
    }

    fn solve_upper(&self, b: &mut [f64]) {
        for i in (0..self.size).rev() {
            let diag = self.row(i)[i];
            b[i] /= diag;
            let bi = b[i];
            for (k, l) in self.row(i)[..i].iter().enumerate() {
                b[k] -= l * bi;
            }
        }
    }

    /// Appends constraint `j`; returns false if it is numerically dependent
    /// on the current working set.
    fn append(&mut self, t: &DMatrix<f64>, working: &[usize], j: usize) -> bool {
        let mut row: Vec<f64> = working.iter().map(|&w| t[(w, j)]).collect();
        self.solve_lower(&mut row);
        let diag = t[(j, j)] - row.iter().map(|v| v * v).sum::<f64>();
        if !(diag > 1e-13 * t[(j, j)].abs().max(f64::MIN_POSITIVE)) {
            return false;
        }
        self.packed.extend_from_slice(&row);
        self.packed.push(diag.sqrt());
        self.size += 1;
        true
    }

    fn rebuild(&mut self, t: &DMatrix<f64>, working: &mut Vec<usize>) {
        self.size = 0;
        self.packed.clear();
        let old = std::mem::take(working);
        for j in old {
            if self.append(t, working, j) {
                working.push(j);
            }
        }
    }
}

/// Runs the active-set loop from a feasible `x0` (with `cx0 = C x0`) and an
/// initial working set of constraints tight at `x0`.
pub(crate) fn run(
    rs: &RangeSpace,
    x0: DVector<f64>,
    cx0: DVector<f64>,
    initial: &[usize],
    tolerance: f64,
    max_iter: usize,
) -> CoreResult {
    let m = rs.rhs.len();
    let mut x = x0;
    let mut cx = cx0;
    let mut working: Vec<usize> = Vec::with_capacity(m);
    let mut in_working = vec![false; m];
    let mut factor = WorkingFactor::new();
    for &j in initial {
        if !in_working[j] && factor.append(&rs.t, &working, j) {
            working.push(j);
            in_working[j] = true;
        }
    }

    let scale = 1.0 + rs.rhs.amax().max(rs.c_x_unc.amax());
    let mut mu = vec![0.0; m];
    let mut cx_target = DVector::zeros(m);
    let mut iterations = 0;
    let mut converged = false;
    // Rows found dependent on the working set. Along any step that keeps the
    // working rows fixed they only move by roundoff, so they are left out of
    // the ratio test until the working set shrinks.
    let mut dependent = vec![false; m];
    while iterations < max_iter {
        iterations += 1;
        let nw = working.len();
        mu.truncate(0);
        mu.extend(working.iter().map(|&w| rs.c_x_unc[w] - rs.rhs[w]));
        factor.solve_lower(&mut mu);
        factor.solve_upper(&mut mu);

        let mut x_target = rs.x_unc.clone();
        for (k, &w) in working.iter().enumerate() {
            x_target.axpy(-mu[k], &rs.p.column(w), 1.0);
        }
        cx_target.gemv(1.0, &rs.c, &x_target, 0.0);
        // One round of iterative refinement on the working rows.
        if nw > 0 {
            let mut delta: Vec<f64> = working.iter().map(|&w| cx_target[w] - rs.rhs[w]).collect();
            factor.solve_lower(&mut delta);
            factor.solve_upper(&mut delta);
            for (k, &w) in working.iter().enumerate() {
                mu[k] += delta[k];
                x_target.axpy(-delta[k], &rs.p.column(w), 1.0);
            }
            cx_target.gemv(1.0, &rs.c, &x_target, 0.0);
        }

        // Ratio test along x -> x_target over constraints outside W.
        let mut alpha = 1.0;
        let mut blocking = None;
        for j in 0..m {
            if in_working[j] || dependent[j] {
                continue;
            }
            let delta = cx_target[j] - cx[j];
            if delta > 1e-14 * scale {
                let step = ((rs.rhs[j] - cx[j]) / delta).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(j);
                }
            }
        }

        if let Some(j) = blocking {
            if factor.append(&rs.t, &working, j) {
                x += (x_target - &x) * alpha;
                cx.gemv(1.0, &rs.c, &x, 0.0);
                working.push(j);
                in_working[j] = true;
            } else {
                dependent[j] = true;
            }
            continue;
        }

        x = x_target;
        cx.copy_from(&cx_target);
        if nw == 0 {
            converged = true;
            break;
        }
        let k = argmin(&mu[..nw]);
        let mu_scale = 1.0 + mu[..nw].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if mu[k] >= -tolerance * mu_scale {
            converged = true;
            break;
        }
        in_working[working.remove(k)] = false;
        factor.rebuild(&rs.t, &mut working);
        dependent.fill(false);
    }

    let mut multipliers = DVector::zeros(m);
    if converged {
        for (k, &w) in working.iter().enumerate() {
            multipliers[w] = mu[k].max(0.0);
        }
    }
    CoreResult {
        x,
        cx,
        working,
        multipliers,
        iterations,
        converged,
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
