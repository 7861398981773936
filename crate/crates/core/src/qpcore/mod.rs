//! Dense convex quadratic programming and nullspace bases.
//!
//! All problems use the objective `½xᵀHx + gᵀx`. The solver is a primal
//! active-set method on the regularized Hessian `H + εI` with
//! `ε = 1e-8·trace(H)/d`. A few proximal-point rounds (re-solving with the
//! penalty centred on the previous iterate) remove the bias the
//! regularization introduces, so PSD Hessians still yield minimizers of the
//! original objective.

mod active_set;
mod nullspace;

pub use nullspace::{nullspace_basis, NullspaceBasis, DEFAULT_RANK_TOLERANCE};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use active_set::RangeSpace;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
const REGULARIZATION: f64 = 1e-8;
const MIN_REGULARIZATION: f64 = 1e-12;
const PROX_ROUNDS: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains NaN or infinite values")]
    NotFinite,
    #[error("hessian is not symmetric")]
    NotSymmetric,
}

/// `min ½xᵀHx + gᵀx  s.t.  E x = e,  A x ≤ b`.
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QuadraticProgram {
    /// Problem with no constraints.
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, d),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, d),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_eq(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_ineq(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        let shape = |name: &str, m: &DMatrix<f64>, rows: usize| {
            if m.ncols() != d || m.nrows() != rows {
                Err(QpError::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{d}",
                    m.nrows(),
                    m.ncols()
                )))
            } else {
                Ok(())
            }
        };
        shape("hessian", &self.hessian, d)?;
        shape("equality matrix", &self.eq_matrix, self.eq_rhs.len())?;
        shape("inequality matrix", &self.ineq_matrix, self.ineq_rhs.len())?;
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !(finite(self.hessian.as_slice())
            && finite(self.gradient.as_slice())
            && finite(self.eq_matrix.as_slice())
            && finite(self.eq_rhs.as_slice())
            && finite(self.ineq_matrix.as_slice())
            && finite(self.ineq_rhs.as_slice()))
        {
            return Err(QpError::NotFinite);
        }
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-12 * (1.0 + self.hessian.amax()) {
            return Err(QpError::NotSymmetric);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Inequalities held tight in the final working set.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub objective: f64,
    /// Largest constraint violation; for infeasible problems, the smallest
    /// achievable one found by the feasibility phase.
    pub violation: f64,
}

/// Residuals of the optimality conditions at a solution.
#[derive(Clone, Debug)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub min_multiplier: f64,
    pub complementarity: f64,
    /// Reference magnitude for the stationarity residual.
    pub scale: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        (self.stationarity / self.scale)
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(-self.min_multiplier)
            .max(self.complementarity)
    }
}

pub fn kkt_report(problem: &QuadraticProgram, solution: &QpSolution) -> KktReport {
    let x = &solution.x;
    let hx = &problem.hessian * x;
    let residual = &hx
        + &problem.gradient
        + problem.ineq_matrix.transpose() * &solution.ineq_multipliers
        + problem.eq_matrix.transpose() * &solution.eq_multipliers;
    let slack = &problem.ineq_matrix * x - &problem.ineq_rhs;
    let complementarity = solution
        .ineq_multipliers
        .iter()
        .zip(slack.iter())
        .fold(0.0_f64, |acc, (m, s)| acc.max((m * s).abs()));
    KktReport {
        stationarity: residual.amax(),
        primal_eq: (&problem.eq_matrix * x - &problem.eq_rhs).amax(),
        primal_ineq: slack.max().max(0.0),
        min_multiplier: solution.ineq_multipliers.min().min(0.0),
        complementarity,
        scale: 1.0 + hx.amax().max(problem.gradient.amax()),
    }
}

fn regularization(trace: f64, dim: usize) -> f64 {
    (REGULARIZATION * trace / dim.max(1) as f64).max(MIN_REGULARIZATION)
}

fn max_iterations(dim: usize, rows: usize) -> usize {
    10 * (dim + rows) + 100
}

/// Solves a convex QP.
pub fn solve_qp(problem: &QuadraticProgram, tolerance: f64) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let d = problem.dim();
    let m = problem.ineq_rhs.len();
    let c = &problem.ineq_matrix;

    // Parameterize the equality-feasible set as x = x_p + Z z.
    let (x_p, z) = if problem.eq_rhs.is_empty() {
        (DVector::zeros(d), DMatrix::identity(d, d))
    } else {
        let e = &problem.eq_matrix;
        let x_p = crate::linalg::lstsq(e, &problem.eq_rhs, DEFAULT_RANK_TOLERANCE)
            .expect("SVD of validated equality rows converges");
        let residual = (e * &x_p - &problem.eq_rhs).amax();
        if residual > tolerance.max(1e-12) * (1.0 + problem.eq_rhs.amax()) * 1e3 {
            return Ok(infeasible(problem, x_p, residual));
        }
        (x_p, nullspace_basis(e, DEFAULT_RANK_TOLERANCE).basis)
    };
    let nz = z.ncols();
    let cz = c * &z;
    let dz = &problem.ineq_rhs - c * &x_p;
    let feas_tol = tolerance * (1.0 + problem.ineq_rhs.amax());

    if nz == 0 {
        let violation = (-&dz).max().max(0.0);
        if m > 0 && violation > feas_tol {
            return Ok(infeasible(problem, x_p, violation));
        }
        return Ok(finish(problem, x_p, QpStatus::Optimal, vec![], DVector::zeros(m), 0));
    }

    // Feasible start, from a phase-1 problem if z = 0 violates a row.
    let mut iterations = 0;
    let mut z0 = DVector::zeros(nz);
    if m > 0 && dz.min() < 0.0 {
        let phase1 = SlackProgram {
            hessian: DMatrix::zeros(nz, nz),
            gradient: DVector::zeros(nz),
            soft_matrix: cz.clone(),
            soft_rhs: dz.clone(),
            hard_matrix: DMatrix::zeros(0, nz),
            hard_rhs: DVector::zeros(0),
        };
        let sol = phase1.solve(&z0, tolerance);
        iterations += sol.iterations;
        let violation = sol.v.max().max(0.0);
        if violation > feas_tol {
            return Ok(infeasible(problem, &x_p + &z * &sol.u, violation));
        }
        z0 = sol.u;
    }

    let hz = z.transpose() * &problem.hessian * &z;
    let gz = z.transpose() * (&problem.gradient + &problem.hessian * &x_p);
    let eps = regularization(hz.trace(), nz);
    let mut h_reg = hz.clone();
    for i in 0..nz {
        h_reg[(i, i)] += eps;
    }
    let chol = match h_reg.cholesky() {
        Some(c) => c,
        None => {
            // Not PSD: the active-set method has no meaning here.
            return Ok(finish(problem, &x_p + &z * &z0, QpStatus::MaxIter, vec![], DVector::zeros(m), iterations));
        }
    };
    let x_unc = -chol.solve(&gz);
    let p = chol.solve(&cz.transpose());
    let t = &cz * &p;
    let cz0 = &cz * &z0;
    let rhs = dz.zip_map(&cz0, f64::max);
    let mut rs = RangeSpace {
        c: cz.clone(),
        c_x_unc: &cz * &x_unc,
        x_unc,
        p,
        t,
        rhs,
    };
    let base_unc = rs.x_unc.clone();
    let max_iter = max_iterations(nz, m);
    let mut out = active_set::run(&rs, z0, cz0, &[], tolerance, max_iter);
    iterations += out.iterations;
    for _ in 0..PROX_ROUNDS {
        if !out.converged {
            break;
        }
        rs.x_unc = &base_unc + chol.solve(&out.x) * eps;
        rs.c_x_unc = &cz * &rs.x_unc;
        let working = out.working.clone();
        out = active_set::run(&rs, out.x, out.cx, &working, tolerance, max_iter);
        iterations += out.iterations;
    }
    let status = if out.converged { QpStatus::Optimal } else { QpStatus::MaxIter };
    let x = &x_p + &z * &out.x;
    let mut working = out.working;
    working.sort_unstable();
    Ok(finish(problem, x, status, working, out.multipliers, iterations))
}

fn finish(
    problem: &QuadraticProgram,
    x: DVector<f64>,
    status: QpStatus,
    active_set: Vec<usize>,
    ineq_multipliers: DVector<f64>,
    iterations: usize,
) -> QpSolution {
    let eq_multipliers = if problem.eq_rhs.is_empty() {
        DVector::zeros(0)
    } else {
        let residual = -(&problem.hessian * &x
            + &problem.gradient
            + problem.ineq_matrix.transpose() * &ineq_multipliers);
        crate::linalg::lstsq(&problem.eq_matrix.transpose(), &residual, DEFAULT_RANK_TOLERANCE)
            .expect("SVD of validated equality rows converges")
    };
    let violation = constraint_violation(problem, &x);
    QpSolution {
        objective: problem.objective(&x),
        x,
        status,
        active_set,
        iterations,
        ineq_multipliers,
        eq_multipliers,
        violation,
    }
}

fn constraint_violation(problem: &QuadraticProgram, x: &DVector<f64>) -> f64 {
    let eq = (&problem.eq_matrix * x - &problem.eq_rhs).amax();
    let ineq = if problem.ineq_rhs.is_empty() {
        0.0
    } else {
        (&problem.ineq_matrix * x - &problem.ineq_rhs).max().max(0.0)
    };
    eq.max(ineq)
}

fn infeasible(problem: &QuadraticProgram, x: DVector<f64>, violation: f64) -> QpSolution {
    QpSolution {
        objective: problem.objective(&x),
        x,
        status: QpStatus::Infeasible,
        active_set: vec![],
        iterations: 0,
        ineq_multipliers: DVector::zeros(problem.ineq_rhs.len()),
        eq_multipliers: DVector::zeros(problem.eq_rhs.len()),
        violation,
    }
}

/// Least-squares relaxation of a set of soft inequalities under hard ones:
///
/// `min ½uᵀHu + gᵀu + ‖v‖²  s.t.  A_s u − v ≤ b_s,  A_h u ≤ b_h`.
///
/// At the optimum `v = max(A_s u − b_s, 0)`, i.e. the slack of each soft row.
/// The block structure of the Hessian is used to form the range-space
/// quantities without factorizing the full `(u, v)` system.
#[derive(Clone, Debug)]
pub struct SlackProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub soft_matrix: DMatrix<f64>,
    pub soft_rhs: DVector<f64>,
    pub hard_matrix: DMatrix<f64>,
    pub hard_rhs: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct SlackSolution {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Objective value `½uᵀHu + gᵀu + ‖v‖²`.
    pub objective: f64,
    /// Multipliers of the soft rows followed by the hard rows.
    pub multipliers: DVector<f64>,
}

impl SlackProgram {
    /// Solves from `start`, which must satisfy the hard rows up to round-off.
    pub fn solve(&self, start: &DVector<f64>, tolerance: f64) -> SlackSolution {
        let p = self.gradient.len();
        let ms = self.soft_rhs.len();
        let mh = self.hard_rhs.len();
        let m = ms + mh;
        let soft_residual = |u: &DVector<f64>| (&self.soft_matrix * u - &self.soft_rhs).map(|r| r.max(0.0));

        if p == 0 {
            let u = DVector::zeros(0);
            let v = soft_residual(&u);
            return SlackSolution {
                objective: v.norm_squared(),
                u,
                v,
                status: QpStatus::Optimal,
                iterations: 0,
                multipliers: DVector::zeros(m),
            };
        }

        let eps = regularization(self.hessian.trace() + 2.0 * ms as f64, p + ms);
        let hv = 2.0 + eps;
        let mut h_reg = self.hessian.clone();
        for i in 0..p {
            h_reg[(i, i)] += eps;
        }
        let chol = h_reg
            .cholesky()
            .expect("regularized hessian of a slack program must be positive definite");

        // C = [[A_s, −I], [A_h, 0]], H⁻¹ = blockdiag(G, I/h_v), G = (H_u + εI)⁻¹.
        let mut constraint_rows = DMatrix::zeros(m, p);
        constraint_rows.rows_mut(0, ms).copy_from(&self.soft_matrix);
        constraint_rows.rows_mut(ms, mh).copy_from(&self.hard_matrix);
        // With more constraints than variables, forming G once and
        // multiplying is cheaper than one triangular solve per row.
        let g_ct = if m > p {
            chol.inverse() * constraint_rows.transpose()
        } else {
            chol.solve(&constraint_rows.transpose())
        };
        let mut t = &constraint_rows * &g_ct;
        for i in 0..ms {
            t[(i, i)] += 1.0 / hv;
        }
        let mut p_full = DMatrix::zeros(p + ms, m);
        p_full.rows_mut(0, p).copy_from(&g_ct);
        for i in 0..ms {
            p_full[(p + i, i)] = -1.0 / hv;
        }
        let u_unc = -chol.solve(&self.gradient);
        let mut x_unc = DVector::zeros(p + ms);
        x_unc.rows_mut(0, p).copy_from(&u_unc);
        let c_x = |x: &DVector<f64>| {
            let mut out = &constraint_rows * x.rows(0, p);
            for i in 0..ms {
                out[i] -= x[p + i];
            }
            out
        };

        let u0 = start.clone();
        let v0 = soft_residual(&u0);
        let mut x0 = DVector::zeros(p + ms);
        x0.rows_mut(0, p).copy_from(&u0);
        x0.rows_mut(p, ms).copy_from(&v0);
        let cx0 = c_x(&x0);
        let mut rhs = DVector::zeros(m);
        rhs.rows_mut(0, ms).copy_from(&self.soft_rhs);
        rhs.rows_mut(ms, mh).copy_from(&self.hard_rhs);
        for j in ms..m {
            rhs[j] = rhs[j].max(cx0[j]);
        }
        let initial: Vec<usize> = (0..ms).filter(|&i| v0[i] > 0.0).collect();

        let mut c_full = DMatrix::zeros(m, p + ms);
        c_full.columns_mut(0, p).copy_from(&constraint_rows);
        for i in 0..ms {
            c_full[(i, p + i)] = -1.0;
        }
        let mut rs = RangeSpace {
            c: c_full,
            c_x_unc: c_x(&x_unc),
            x_unc,
            p: p_full,
            t,
            rhs,
        };
        let base_unc = rs.x_unc.clone();
        let max_iter = max_iterations(p + ms, m);
        let mut out = active_set::run(&rs, x0, cx0, &initial, tolerance, max_iter);
        let mut iterations = out.iterations;
        for _ in 0..PROX_ROUNDS {
            if !out.converged {
                break;
            }
            let mut shift = DVector::zeros(p + ms);
            shift
                .rows_mut(0, p)
                .copy_from(&(chol.solve(&out.x.rows(0, p).into_owned()) * eps));
            for i in 0..ms {
                shift[p + i] = out.x[p + i] * eps / hv;
            }
            rs.x_unc = &base_unc + shift;
            rs.c_x_unc = c_x(&rs.x_unc);
            let working = out.working.clone();
            out = active_set::run(&rs, out.x, out.cx, &working, tolerance, max_iter);
            iterations += out.iterations;
        }

        let u = out.x.rows(0, p).into_owned();
        let v = soft_residual(&u);
        let objective = 0.5 * u.dot(&(&self.hessian * &u)) + self.gradient.dot(&u) + v.norm_squared();
        SlackSolution {
            u,
            v,
            status: if out.converged { QpStatus::Optimal } else { QpStatus::MaxIter },
            iterations,
            objective,
            multipliers: out.multipliers,
        }
    }
}
