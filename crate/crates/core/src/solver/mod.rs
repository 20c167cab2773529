//! Dense LP and convex QP solvers.
//!
//! Linear programs `min cᵀx  s.t. Gx ≤ g, Ax = b` with free `x` are solved
//! through their dual in standard form, which has one row per primal
//! variable. Every LP issued by the polytope code has four to six
//! variables and up to a few hundred constraints, so the revised simplex
//! works on a tiny basis regardless of the constraint count. The primal
//! point is recovered from the simplex multipliers of the dual.
//!
//! Quadratic programs use a primal active-set method started from the LP
//! phase-one point, or from a caller-supplied working set.

mod lp;
mod qp;

use nalgebra::{DMatrix, DVector};

pub use lp::solve_lp;
pub use qp::{solve_qp, solve_qp_warm};

/// Outcome classification shared by LP and QP solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

/// Dense convex QP: `min ½xᵀQx + qᵀx  s.t.  A x = b,  G x ≤ g`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_a: DMatrix<f64>,
    pub eq_b: DVector<f64>,
    pub ineq_g: DMatrix<f64>,
    pub ineq_h: DVector<f64>,
}

impl QpProblem {
    /// Problem with no constraints yet; add rows with the builder methods.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_a: DMatrix::zeros(0, n),
            eq_b: DVector::zeros(0),
            ineq_g: DMatrix::zeros(0, n),
            ineq_h: DVector::zeros(0),
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_a = a;
        self.eq_b = b;
        self
    }

    pub fn with_ineq(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq_g = g;
        self.ineq_h = h;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub(crate) fn check(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        let shape_ok = self.hessian.nrows() == n
            && self.hessian.ncols() == n
            && self.eq_a.ncols() == n
            && self.eq_a.nrows() == self.eq_b.len()
            && self.ineq_g.ncols() == n
            && self.ineq_g.nrows() == self.ineq_h.len();
        if !shape_ok {
            return Err(SolverError::Shape);
        }
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.eq_a.iter().all(|v| v.is_finite())
            && self.eq_b.iter().all(|v| v.is_finite())
            && self.ineq_g.iter().all(|v| v.is_finite())
            && self.ineq_h.iter().all(|v| v.is_finite());
        if !finite {
            return Err(SolverError::NonFinite);
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.hessian[(i, j)], self.hessian[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(SolverError::NotSymmetric);
                }
            }
        }
        Ok(())
    }
}

/// Result of an LP or QP solve.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x_opt: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Multipliers of `Gx ≤ g` (non-negative at optimality).
    pub dual_ineq: DVector<f64>,
    /// Multipliers of `Ax = b`.
    pub dual_eq: DVector<f64>,
    /// Max of stationarity, primal feasibility and complementarity residuals.
    pub kkt_residual: f64,
    /// Inequality rows in the final working set (QP) or tight at the optimum (LP).
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// Set when Hessian eigenvalues had to be clipped before factorization.
    pub psd_repaired: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub(crate) fn failed(status: SolveStatus, n: usize, m_in: usize, m_eq: usize, iterations: usize) -> Self {
        Self {
            x_opt: DVector::zeros(n),
            objective: match status {
                SolveStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            status,
            dual_ineq: DVector::zeros(m_in),
            dual_eq: DVector::zeros(m_eq),
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            iterations,
            psd_repaired: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("inconsistent problem dimensions")]
    Shape,
    #[error("problem data contains NaN or infinity")]
    NonFinite,
    #[error("hessian is not symmetric")]
    NotSymmetric,
    #[error("hessian has eigenvalue {0:e} below the PSD floor")]
    NotConvex(f64),
    #[error("solver stopped with status {0:?}")]
    Stalled(SolveStatus),
}

/// KKT residuals of a candidate primal/dual pair.
///
/// Returns `(stationarity, primal infeasibility, max |μᵢ (Gx − g)ᵢ|, min μᵢ)`.
pub fn kkt_residuals(
    p: &QpProblem,
    x: &DVector<f64>,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
) -> (f64, f64, f64, f64) {
    let mut grad = &p.hessian * x + &p.linear;
    if mu.len() > 0 {
        grad += p.ineq_g.transpose() * mu;
    }
    if nu.len() > 0 {
        grad += p.eq_a.transpose() * nu;
    }
    let stat = grad.amax();
    let slack = &p.ineq_g * x - &p.ineq_h;
    let ineq_viol = slack.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let eq_viol = if p.eq_b.len() > 0 {
        (&p.eq_a * x - &p.eq_b).amax()
    } else {
        0.0
    };
    let comp = slack
        .iter()
        .zip(mu.iter())
        .fold(0.0f64, |acc, (s, m)| acc.max((s * m).abs()));
    let mu_min = mu.iter().fold(f64::INFINITY, |acc, &m| acc.min(m));
    (stat, ineq_viol.max(eq_viol), comp, mu_min)
}
