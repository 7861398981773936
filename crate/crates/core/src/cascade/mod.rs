//! Strictly prioritized cascade of least-squares QPs.
//!
//! Level `r` minimizes `‖v‖² + ‖w‖²` where `v ≥ Āy + ā` are the slacks of
//! its (weighted) inequality rows and `w = B̄y + b̄` the residuals of its
//! equality rows. The search is restricted to `y = y_{r−1} + Z u`, `Z`
//! spanning the nullspace of all higher-priority equality rows, and to the
//! caps `Ā_i y + ā_i ≤ v_i*` of every higher level `i`, so no level can
//! degrade the optimum of the levels above it.

mod audit;

pub use audit::*;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qpcore::{nullspace_basis, QpStatus, SlackProgram, DEFAULT_RANK_TOLERANCE, DEFAULT_TOLERANCE};
use crate::tasks::{AffineTaskSet, Formulation, TorqueMap, VariableLayout};

/// Relaxation added to the inequality caps carried down from higher levels.
pub const CAP_RELAXATION: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("hierarchy has no levels")]
    Empty,
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("non-finite task data at level {0}")]
    NotFinite(usize),
}

#[derive(Clone, Debug)]
pub struct Hierarchy {
    /// Priority order: `levels[0]` is the most important.
    pub levels: Vec<AffineTaskSet>,
    pub layout: VariableLayout,
    /// When present in the reduced formulation, torques are recovered from
    /// the solution.
    pub torque_map: Option<TorqueMap>,
}

impl Hierarchy {
    pub fn new(levels: Vec<AffineTaskSet>, layout: VariableLayout) -> Self {
        Self {
            levels,
            layout,
            torque_map: None,
        }
    }

    pub fn with_torque_map(mut self, map: TorqueMap) -> Self {
        self.torque_map = Some(map);
        self
    }

    pub fn check(&self) -> Result<(), CascadeError> {
        if self.levels.is_empty() {
            return Err(CascadeError::Empty);
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.dim() != self.layout.dim() {
                return Err(CascadeError::Layout(format!(
                    "level {} has {} columns, layout has {}",
                    i + 1,
                    level.dim(),
                    self.layout.dim()
                )));
            }
            let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
            if !(finite(level.eq_matrix.as_slice())
                && finite(level.eq_vector.as_slice())
                && finite(level.ineq_matrix.as_slice())
                && finite(level.ineq_vector.as_slice()))
            {
                return Err(CascadeError::NotFinite(i + 1));
            }
        }
        Ok(())
    }

    /// `(eq rows, ineq rows)` per level.
    pub fn row_counts(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|l| (l.eq_rows(), l.ineq_rows())).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Sequential,
    /// Computes each level's nullspace update on a second thread while the
    /// level's QP runs. Results are bit-identical to sequential mode.
    Overlapped,
}

#[derive(Clone, Copy, Debug)]
pub struct CascadeOptions {
    pub mode: ExecutionMode,
    pub tolerance: f64,
    pub rank_tolerance: f64,
    /// Largest level-1 residual still counted as feasible.
    pub feasibility_tolerance: f64,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            mode: ExecutionMode::Sequential,
            tolerance: DEFAULT_TOLERANCE,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            feasibility_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelStatus {
    Optimal,
    /// Top level could not be satisfied; the slacks measure by how much.
    Infeasible,
    MaxIter,
    /// No freedom left; the level was only evaluated at the current point.
    Evaluated,
}

#[derive(Clone, Debug)]
pub struct LevelSolution {
    /// Weighted inequality slacks `v* = max(Āy + ā, 0)`.
    pub v: DVector<f64>,
    /// Weighted equality residuals `w = B̄y + b̄`.
    pub w: DVector<f64>,
    pub status: LevelStatus,
    /// `‖v‖² + ‖w‖²`.
    pub objective: f64,
    /// Columns of the nullspace basis the level was solved over.
    pub freedom: usize,
    pub iterations: usize,
    pub qp_time: Duration,
    pub svd_time: Duration,
}

impl LevelSolution {
    pub fn max_violation(&self) -> f64 {
        self.v.iter().chain(self.w.iter()).fold(0.0_f64, |a, x| a.max(x.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct CascadeSolution {
    pub y_star: DVector<f64>,
    pub levels: Vec<LevelSolution>,
    /// Extracted (full formulation) or recovered (reduced, with torque map).
    pub torques: Option<DVector<f64>>,
    pub layout: VariableLayout,
}

impl CascadeSolution {
    pub fn qdd(&self) -> DVector<f64> {
        self.y_star.rows_range(self.layout.qdd()).into_owned()
    }

    pub fn lambda(&self) -> DVector<f64> {
        self.y_star.rows_range(self.layout.lambda()).into_owned()
    }

    pub fn feasible(&self) -> bool {
        self.levels.first().is_some_and(|l| l.status != LevelStatus::Infeasible)
            && self.levels.iter().all(|l| l.status != LevelStatus::MaxIter)
    }

    pub fn total_time(&self) -> Duration {
        self.levels.iter().map(|l| l.qp_time + l.svd_time).sum()
    }
}

fn weighted(matrix: &DMatrix<f64>, vector: &DVector<f64>, weights: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut m = matrix.clone();
    for (i, w) in weights.iter().enumerate() {
        m.row_mut(i).scale_mut(*w);
    }
    (m, vector.component_mul(weights))
}

/// Stacks rows of `b` below `a`.
fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn vstack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Solves the hierarchy level by level.
pub fn solve_hierarchy(hierarchy: &Hierarchy, options: &CascadeOptions) -> Result<CascadeSolution, CascadeError> {
    hierarchy.check()?;
    let d = hierarchy.layout.dim();
    let mut y = DVector::zeros(d);
    let mut z = DMatrix::identity(d, d);
    // Accumulated caps `cap_matrix · y ≤ cap_bound`.
    let mut cap_matrix = DMatrix::zeros(0, d);
    let mut cap_bound = DVector::zeros(0);
    let mut levels = Vec::with_capacity(hierarchy.levels.len());

    for (index, level) in hierarchy.levels.iter().enumerate() {
        let (a, a0) = weighted(&level.ineq_matrix, &level.ineq_vector, &level.ineq_weights);
        let (b, b0) = weighted(&level.eq_matrix, &level.eq_vector, &level.eq_weights);
        let p = z.ncols();

        let mut qp_time = Duration::ZERO;
        let mut svd_time = Duration::ZERO;
        let mut iterations = 0;
        let mut status = LevelStatus::Evaluated;
        let mut next_z = None;

        if p > 0 {
            let bz = &b * &z;
            let residual = &b * &y + &b0;
            let az = &a * &z;
            // Caps that no longer depend on u are constant and always hold.
            let cap_z = &cap_matrix * &z;
            let cap_slack = &cap_bound - &cap_matrix * &y;
            let scale = 1e-12 * (1.0 + cap_z.amax());
            let live: Vec<usize> = (0..cap_z.nrows()).filter(|&i| cap_z.row(i).amax() > scale).collect();
            let mut hard = DMatrix::zeros(live.len(), p);
            let mut hard_rhs = DVector::zeros(live.len());
            for (k, &i) in live.iter().enumerate() {
                hard.row_mut(k).copy_from(&cap_z.row(i));
                hard_rhs[k] = cap_slack[i];
            }
            let program = SlackProgram {
                hessian: bz.transpose() * &bz * 2.0,
                gradient: bz.transpose() * &residual * 2.0,
                soft_matrix: az,
                soft_rhs: -(&a * &y + &a0),
                hard_matrix: hard,
                hard_rhs,
            };

            let nullspace = |bz: &DMatrix<f64>| {
                let start = Instant::now();
                let basis = if bz.nrows() == 0 {
                    None
                } else {
                    Some(nullspace_basis(bz, options.rank_tolerance).basis)
                };
                (basis, start.elapsed())
            };
            let solve = || {
                let start = Instant::now();
                let sol = program.solve(&DVector::zeros(p), options.tolerance);
                (sol, start.elapsed())
            };
            let ((sol, t_qp), (basis, t_svd)) = match options.mode {
                ExecutionMode::Sequential => {
                    let s = solve();
                    (s, nullspace(&bz))
                }
                ExecutionMode::Overlapped => std::thread::scope(|scope| {
                    let handle = scope.spawn(|| nullspace(&bz));
                    let s = solve();
                    (s, handle.join().expect("nullspace thread panicked"))
                }),
            };
            qp_time = t_qp;
            svd_time = t_svd;
            iterations = sol.iterations;
            status = match sol.status {
                QpStatus::Optimal => LevelStatus::Optimal,
                _ => LevelStatus::MaxIter,
            };
            y += &z * &sol.u;
            next_z = basis;
        }

        let v = (&a * &y + &a0).map(|r| r.max(0.0));
        let w = &b * &y + &b0;
        let objective = v.norm_squared() + w.norm_squared();
        if index == 0 && status != LevelStatus::MaxIter {
            let worst = v.iter().chain(w.iter()).fold(0.0_f64, |m, x| m.max(x.abs()));
            if worst > options.feasibility_tolerance {
                status = LevelStatus::Infeasible;
            }
        }

        if a.nrows() > 0 {
            cap_matrix = vstack(&cap_matrix, &a);
            cap_bound = vstack_vec(&cap_bound, &(v.add_scalar(CAP_RELAXATION) - &a0));
        }
        if let Some(basis) = next_z {
            z = &z * basis;
        }
        levels.push(LevelSolution {
            v,
            w,
            status,
            objective,
            freedom: p,
            iterations,
            qp_time,
            svd_time,
        });
    }

    let layout = hierarchy.layout;
    let torques = match layout.mode {
        Formulation::Full => Some(y.rows_range(layout.tau()).into_owned()),
        Formulation::Reduced => hierarchy
            .torque_map
            .as_ref()
            .map(|map| map.apply(&y)),
    };
    Ok(CascadeSolution {
        y_star: y,
        levels,
        torques,
        layout,
    })
}

/// `τ = T [q̈; λ] + t` for a reduced-formulation solution.
pub fn recover_torques(solution: &CascadeSolution, map: &TorqueMap) -> Result<DVector<f64>, CascadeError> {
    let layout = &solution.layout;
    if layout.mode != Formulation::Reduced || map.matrix.shape() != (layout.n, layout.dim()) {
        return Err(CascadeError::Layout(format!(
            "torque map {}x{} does not fit a reduced layout of width {}",
            map.matrix.nrows(),
            map.matrix.ncols(),
            layout.dim()
        )));
    }
    Ok(map.apply(&solution.y_star))
}
