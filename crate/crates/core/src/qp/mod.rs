//! Dense convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  lower ≤ A x ≤ upper
//! ```
//!
//! Equality rows have `lower == upper`; one-sided rows use `±∞`.

mod admm;
mod force;

pub use admm::{QpSettings, QpSolver, WarmStart};
pub use force::{build_force_qp, force_qp_cost, ContactLimits, FrictionRows, QpWeights};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("P is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("row {row}: lower bound {lower} exceeds upper bound {upper}")]
    InvertedBounds { row: usize, lower: f64, upper: f64 },
    #[error("non-finite problem data")]
    NonFinite,
    #[error("KKT factorization failed")]
    Factorization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        let problem = Self {
            p,
            q,
            a,
            lower,
            upper,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Problem with no constraint rows.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self, QpError> {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let m = self.lower.len();
        if self.p.shape() != (n, n) {
            return Err(QpError::Dimension(format!("P is {:?}, expected ({n}, {n})", self.p.shape())));
        }
        if self.a.shape() != (m, n) {
            return Err(QpError::Dimension(format!("A is {:?}, expected ({m}, {n})", self.a.shape())));
        }
        if self.upper.len() != m {
            return Err(QpError::Dimension(format!("upper has {} rows, lower has {m}", self.upper.len())));
        }
        if !(self.p.iter().chain(self.q.iter()).chain(self.a.iter()).all(|v| v.is_finite())) {
            return Err(QpError::NonFinite);
        }
        if self.lower.iter().chain(self.upper.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite);
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-10 {
            return Err(QpError::NotSymmetric(asym));
        }
        for row in 0..m {
            if self.lower[row] > self.upper[row] {
                return Err(QpError::InvertedBounds {
                    row,
                    lower: self.lower[row],
                    upper: self.upper[row],
                });
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Deterministic text dump: dimensions, then P, q, A, lower, upper in
    /// row-major order, one row per line, every number in shortest
    /// round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.num_vars();
        let m = self.num_constraints();
        let _ = writeln!(out, "qp n={n} m={m}");
        let row = |out: &mut String, label: &str, vals: &mut dyn Iterator<Item = f64>| {
            out.push_str(label);
            for v in vals {
                out.push(' ');
                out.push_str(&fmt_full(v));
            }
            out.push('\n');
        };
        for r in 0..n {
            row(&mut out, "P", &mut self.p.row(r).iter().copied());
        }
        row(&mut out, "q", &mut self.q.iter().copied());
        for r in 0..m {
            row(&mut out, "A", &mut self.a.row(r).iter().copied());
        }
        row(&mut out, "l", &mut self.lower.iter().copied());
        row(&mut out, "u", &mut self.upper.iter().copied());
        out
    }
}

/// Shortest decimal that round-trips to the same `f64`; infinities as `inf`.
pub(crate) fn fmt_full(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraint multipliers; positive when the upper bound is active,
    /// negative for the lower bound.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}
