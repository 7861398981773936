//! Weighted affine task rows over the decision vector.
//!
//! The decision vector is `y = [q̈; λ; τ]` in the full formulation and
//! `y = [q̈; λ]` in the reduced one, where torques are eliminated through the
//! actuated rows of the equations of motion (see [`TorqueMap`]). Inequality
//! rows mean `A y + a ≤ 0`, equality rows `B y + b = 0`.

mod builders;

pub use builders::*;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Full,
    Reduced,
}

/// Index bookkeeping for the decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableLayout {
    /// Actuated degrees of freedom.
    pub n: usize,
    /// Active contacts.
    pub c: usize,
    pub mode: Formulation,
}

impl VariableLayout {
    pub fn new(n: usize, c: usize, mode: Formulation) -> Self {
        Self { n, c, mode }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            Formulation::Full => 2 * self.n + 6 + 6 * self.c,
            Formulation::Reduced => self.n + 6 + 6 * self.c,
        }
    }

    pub fn qdd(&self) -> std::ops::Range<usize> {
        0..self.n + 6
    }

    pub fn lambda(&self) -> std::ops::Range<usize> {
        self.n + 6..self.n + 6 + 6 * self.c
    }

    /// Torque columns; empty in the reduced formulation.
    pub fn tau(&self) -> std::ops::Range<usize> {
        match self.mode {
            Formulation::Full => self.n + 6 + 6 * self.c..self.dim(),
            Formulation::Reduced => self.dim()..self.dim(),
        }
    }

    /// Width of the `[q̈; λ]` block shared by both formulations.
    pub fn motion_force_dim(&self) -> usize {
        self.n + 6 + 6 * self.c
    }

    /// Pads a matrix over `[q̈; λ]` with zero torque columns.
    pub fn embed(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.ncols(), self.motion_force_dim());
        if self.mode == Formulation::Reduced {
            return m.clone();
        }
        let mut out = DMatrix::zeros(m.nrows(), self.dim());
        out.columns_mut(0, m.ncols()).copy_from(m);
        out
    }

    pub fn with_mode(&self, mode: Formulation) -> Self {
        Self { mode, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Equality,
    Inequality,
}

/// Named contiguous group of rows, kept for audits and row-count checks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBlock {
    pub name: String,
    pub kind: RowKind,
    pub rows: usize,
}

/// Stack of equality and inequality rows with per-row weights.
#[derive(Clone, Debug)]
pub struct AffineTaskSet {
    pub eq_matrix: DMatrix<f64>,
    pub eq_vector: DVector<f64>,
    pub eq_weights: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_vector: DVector<f64>,
    pub ineq_weights: DVector<f64>,
    pub blocks: Vec<TaskBlock>,
}

impl AffineTaskSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            eq_matrix: DMatrix::zeros(0, dim),
            eq_vector: DVector::zeros(0),
            eq_weights: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, dim),
            ineq_vector: DVector::zeros(0),
            ineq_weights: DVector::zeros(0),
            blocks: Vec::new(),
        }
    }

    pub fn equality(name: &str, matrix: DMatrix<f64>, vector: DVector<f64>, weight: f64) -> Self {
        let rows = vector.len();
        let mut out = Self::empty(matrix.ncols());
        out.eq_weights = DVector::from_element(rows, weight);
        out.eq_matrix = matrix;
        out.eq_vector = vector;
        out.blocks.push(TaskBlock {
            name: name.to_string(),
            kind: RowKind::Equality,
            rows,
        });
        out
    }

    pub fn inequality(name: &str, matrix: DMatrix<f64>, vector: DVector<f64>, weight: f64) -> Self {
        let rows = vector.len();
        let mut out = Self::empty(matrix.ncols());
        out.ineq_weights = DVector::from_element(rows, weight);
        out.ineq_matrix = matrix;
        out.ineq_vector = vector;
        out.blocks.push(TaskBlock {
            name: name.to_string(),
            kind: RowKind::Inequality,
            rows,
        });
        out
    }

    pub fn dim(&self) -> usize {
        self.eq_matrix.ncols()
    }

    pub fn eq_rows(&self) -> usize {
        self.eq_vector.len()
    }

    pub fn ineq_rows(&self) -> usize {
        self.ineq_vector.len()
    }

    /// Rows of the named block, summed if the name occurs more than once.
    pub fn block_rows(&self, name: &str) -> usize {
        self.blocks.iter().filter(|b| b.name == name).map(|b| b.rows).sum()
    }

    /// Appends the rows of `other` below the rows of `self`.
    pub fn append(&mut self, other: AffineTaskSet) {
        assert_eq!(self.dim(), other.dim(), "stacking task sets of different width");
        let stack_m = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
            out.rows_mut(0, a.nrows()).copy_from(a);
            out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
            out
        };
        let stack_v = |a: &DVector<f64>, b: &DVector<f64>| {
            let mut out = DVector::zeros(a.len() + b.len());
            out.rows_mut(0, a.len()).copy_from(a);
            out.rows_mut(a.len(), b.len()).copy_from(b);
            out
        };
        if other.eq_rows() > 0 {
            self.eq_matrix = stack_m(&self.eq_matrix, &other.eq_matrix);
            self.eq_vector = stack_v(&self.eq_vector, &other.eq_vector);
            self.eq_weights = stack_v(&self.eq_weights, &other.eq_weights);
        }
        if other.ineq_rows() > 0 {
            self.ineq_matrix = stack_m(&self.ineq_matrix, &other.ineq_matrix);
            self.ineq_vector = stack_v(&self.ineq_vector, &other.ineq_vector);
            self.ineq_weights = stack_v(&self.ineq_weights, &other.ineq_weights);
        }
        self.blocks.extend(other.blocks);
    }

    pub fn stacked(sets: impl IntoIterator<Item = AffineTaskSet>, dim: usize) -> Self {
        let mut out = Self::empty(dim);
        for s in sets {
            out.append(s);
        }
        out
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.eq_weights *= factor;
        self.ineq_weights *= factor;
        self
    }

    /// `(B y + b, A y + a)`.
    pub fn evaluate(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            &self.eq_matrix * y + &self.eq_vector,
            &self.ineq_matrix * y + &self.ineq_vector,
        )
    }

    /// Rewrites rows over a full-formulation vector `[q̈; λ; τ]` as rows over
    /// `[q̈; λ]` by substituting `τ = T [q̈; λ] + t`.
    pub fn reduce(&self, full: &VariableLayout, map: &TorqueMap) -> Result<Self, TaskError> {
        if full.mode != Formulation::Full || self.dim() != full.dim() {
            return Err(TaskError::Layout(format!(
                "reduce expects {}-column full-formulation rows, got {}",
                full.dim(),
                self.dim()
            )));
        }
        let k = full.motion_force_dim();
        if map.matrix.shape() != (full.n, k) {
            return Err(TaskError::Layout("torque map does not match layout".into()));
        }
        let compose = |m: &DMatrix<f64>, v: &DVector<f64>| {
            let tau_cols = m.columns(k, full.n);
            (
                m.columns(0, k) + tau_cols * &map.matrix,
                v + tau_cols * &map.offset,
            )
        };
        let (eq_matrix, eq_vector) = compose(&self.eq_matrix, &self.eq_vector);
        let (ineq_matrix, ineq_vector) = compose(&self.ineq_matrix, &self.ineq_vector);
        Ok(Self {
            eq_matrix,
            eq_vector,
            eq_weights: self.eq_weights.clone(),
            ineq_matrix,
            ineq_vector,
            ineq_weights: self.ineq_weights.clone(),
            blocks: self.blocks.clone(),
        })
    }
}

/// Actuated rows of the equations of motion solved for the torques:
/// `τ = M_u q̈ + N_u − J_{c,u}ᵀ λ = matrix·[q̈; λ] + offset`.
#[derive(Clone, Debug)]
pub struct TorqueMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl TorqueMap {
    pub fn apply(&self, qdd_lambda: &DVector<f64>) -> DVector<f64> {
        &self.matrix * qdd_lambda + &self.offset
    }
}
