//! Condensed finite-horizon QP over contact weights.
//!
//! With the foothold sequence fixed the pendulum is linear time-varying in
//! the contact weights `λₖ`, so every state along the horizon is affine in
//! the stacked weight vector. Only stance legs carry decision variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lip::SwitchedLipSystem;
use crate::polytope::Polytope;
use crate::solver::{solve_qp_warm, QpProblem, SolveStatus, SolverError};

/// Diagonal weights `Q = q·I`, `R = r·I`, `Q_f = qf·I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub q: f64,
    pub r: f64,
    pub qf: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { q: 1.0, r: 0.1, qf: 10.0 }
    }
}

/// Horizon problem: states `x₀ … x_N`, inputs `λ₀ … λ_{N−1}`.
#[derive(Debug, Clone)]
pub struct Horizon<'a> {
    pub sys: &'a SwitchedLipSystem,
    pub x0: DVector<f64>,
    pub start_phase: usize,
    /// Foot positions in effect at each step (`axes × 4`), length `N`.
    pub feet: Vec<DMatrix<f64>>,
    pub weights: Weights,
    /// Running cost is measured on `xₖ − reference`.
    pub reference: DVector<f64>,
    /// Terminal cost is measured on `x_N − terminal_reference`.
    pub terminal_reference: DVector<f64>,
    /// Constraint on `x₁ … x_{N−1}`.
    pub running: Option<&'a Polytope>,
    /// Constraint on `x_N`.
    pub terminal: Option<&'a Polytope>,
    /// Additional constraints `x_k ∈ P` for `k ≥ 1`.
    pub extra: Vec<(usize, Polytope)>,
}

#[derive(Debug, Clone)]
pub struct HorizonSolution {
    pub states: Vec<DVector<f64>>,
    /// Full 4-vectors of contact weights (zeros on swing legs).
    pub lambdas: Vec<DVector<f64>>,
    pub cost: f64,
    pub active_set: Vec<usize>,
}

/// Stacked states `x₁ … x_N = Φ x₀ + G v` over the stance-leg weights `v`.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub phi: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// First variable index and stance legs per step.
    pub slots: Vec<(usize, Vec<usize>)>,
    pub nv: usize,
}

impl Condensed {
    /// Per-step simplex equalities `Σ v = 1`.
    pub fn simplex_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.slots.len(), self.nv);
        for (k, (start, legs)) in self.slots.iter().enumerate() {
            for j in 0..legs.len() {
                a[(k, start + j)] = 1.0;
            }
        }
        (a, DVector::from_element(self.slots.len(), 1.0))
    }

    /// Full 4-vectors of weights from the stacked variables.
    pub fn expand(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        self.slots
            .iter()
            .map(|(start, legs)| {
                let mut lam = DVector::zeros(4);
                for (j, &leg) in legs.iter().enumerate() {
                    lam[leg] = v[start + j];
                }
                lam
            })
            .collect()
    }
}

impl<'a> Horizon<'a> {
    /// Frame-fixed horizon: the system's own footholds at every step,
    /// costs measured from the origin.
    pub fn fixed(sys: &'a SwitchedLipSystem, x0: DVector<f64>, start_phase: usize, steps: usize, weights: Weights) -> Self {
        let n = sys.state_dim();
        Self {
            sys,
            x0,
            start_phase,
            feet: vec![sys.footsteps.clone(); steps],
            weights,
            reference: DVector::zeros(n),
            terminal_reference: DVector::zeros(n),
            running: None,
            terminal: None,
            extra: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.feet.len()
    }

    pub fn condense(&self) -> Condensed {
        let sys = self.sys;
        let n = sys.state_dim();
        let big_n = self.steps();
        let mut slots = Vec::with_capacity(big_n);
        let mut nv = 0;
        for k in 0..big_n {
            let legs = sys.schedule.stance_legs(self.start_phase + k);
            slots.push((nv, legs.clone()));
            nv += legs.len();
        }
        let mut phi = DMatrix::zeros(n * big_n, n);
        let mut g = DMatrix::zeros(n * big_n, nv);
        // Input columns of step i: B pᵢ for each stance foot.
        let cols: Vec<DMatrix<f64>> = (0..big_n)
            .map(|i| {
                let (_, legs) = &slots[i];
                let mut m = DMatrix::zeros(n, legs.len());
                for (c, &leg) in legs.iter().enumerate() {
                    m.set_column(c, &(&sys.b * self.feet[i].column(leg)));
                }
                m
            })
            .collect();
        let mut power = DMatrix::identity(n, n);
        for k in 0..big_n {
            // row block k holds x_{k+1}
            power = &sys.a * power;
            phi.view_mut((n * k, 0), (n, n)).copy_from(&power);
            if k > 0 {
                let prev = g.view((n * (k - 1), 0), (n, nv)).into_owned();
                g.view_mut((n * k, 0), (n, nv)).copy_from(&(&sys.a * prev));
            }
            let (start, legs) = &slots[k];
            g.view_mut((n * k, *start), (n, legs.len())).copy_from(&cols[k]);
        }
        Condensed { phi, g, slots, nv }
    }

    /// Solves the horizon QP. `Ok(None)` when the constraints are infeasible.
    pub fn solve(&self, warm: Option<&[usize]>) -> Result<Option<HorizonSolution>, SolverError> {
        let sys = self.sys;
        let n = sys.state_dim();
        let big_n = self.steps();
        let w = self.weights;
        let c = self.condense();
        let nv = c.nv;
        let free = &c.phi * &self.x0;

        // Quadratic cost on stacked states x₁..x_N; x₀ contributes a constant.
        let mut qdiag = DVector::from_element(n * big_n, w.q);
        let mut offset = DVector::zeros(n * big_n);
        for k in 0..big_n {
            let r = if k + 1 == big_n { &self.terminal_reference } else { &self.reference };
            offset.rows_mut(n * k, n).copy_from(&(free.rows(n * k, n) - r));
        }
        qdiag.rows_mut(n * (big_n - 1), n).fill(w.qf);
        let gq = DMatrix::from_fn(n * big_n, nv, |i, j| c.g[(i, j)] * qdiag[i]);
        let mut hessian = 2.0 * c.g.transpose() * &gq;
        for i in 0..nv {
            hessian[(i, i)] += 2.0 * w.r;
        }
        hessian = 0.5 * (&hessian + hessian.transpose());
        let linear = 2.0 * gq.transpose() * &offset;
        let d0 = &self.x0 - &self.reference;
        let constant = w.q * d0.norm_squared() + offset.component_mul(&offset).dot(&qdiag);

        // Simplex rows per step, then state constraints.
        let (eq_a, eq_b) = c.simplex_rows();
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for i in 0..nv {
            let mut e = DVector::zeros(nv);
            e[i] = -1.0;
            rows.push((e, 0.0));
        }
        let mut add_state_rows = |poly: &Polytope, k: usize| {
            // H x_{k} ≤ h with x_k = free_k + G_k v, k ≥ 1
            let gk = c.g.rows(n * (k - 1), n);
            let fk = free.rows(n * (k - 1), n);
            for r in 0..poly.num_rows() {
                let hrow = poly.normals().row(r);
                let coeff = (hrow * gk).transpose();
                let rhs = poly.offsets()[r] - (hrow * fk)[0];
                rows.push((coeff, rhs));
            }
        };
        if let Some(x) = self.running {
            for k in 1..big_n {
                add_state_rows(x, k);
            }
        }
        if let Some(t) = self.terminal {
            add_state_rows(t, big_n);
        }
        for (k, poly) in &self.extra {
            if *k >= 1 && *k <= big_n {
                add_state_rows(poly, *k);
            }
        }
        let mut ineq_g = DMatrix::zeros(rows.len(), nv);
        let mut ineq_h = DVector::zeros(rows.len());
        for (i, (r, h)) in rows.iter().enumerate() {
            ineq_g.set_row(i, &r.transpose());
            ineq_h[i] = *h;
        }
        let qp = QpProblem::new(hessian, linear).with_eq(eq_a, eq_b).with_ineq(ineq_g, ineq_h);
        let sol = solve_qp_warm(&qp, warm)?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Ok(None),
            other => return Err(SolverError::Stalled(other)),
        }
        let lambdas = c.expand(&sol.x_opt);
        let mut states = Vec::with_capacity(big_n + 1);
        states.push(self.x0.clone());
        let mut x = self.x0.clone();
        for (k, lam) in lambdas.iter().enumerate() {
            x = sys.step_weights(&x, &self.feet[k], lam);
            states.push(x.clone());
        }
        let cost = sol.objective + constant;
        Ok(Some(HorizonSolution { states, lambdas, cost, active_set: sol.active_set }))
    }

    /// Cost of an explicit input sequence (no constraint checks).
    pub fn evaluate(&self, lambdas: &[DVector<f64>]) -> f64 {
        let w = self.weights;
        let mut x = self.x0.clone();
        let mut cost = 0.0;
        for (k, lam) in lambdas.iter().enumerate() {
            cost += w.q * (&x - &self.reference).norm_squared() + w.r * lam.norm_squared();
            x = self.sys.step_weights(&x, &self.feet[k], lam);
        }
        cost + w.qf * (&x - &self.terminal_reference).norm_squared()
    }
}
