use nalgebra::{DMatrix, DVector};

use super::{kkt_residuals, solve_lp, QpProblem, QpSolution, SolveStatus, SolverError};

/// Eigenvalues below this (relative to the largest) are clipped upward.
const PSD_FLOOR: f64 = 1e-10;
const PRIMAL_TOL: f64 = 1e-9;

/// Solve a convex QP from a cold start.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, SolverError> {
    solve_qp_warm(p, None)
}

/// Solve a convex QP, optionally seeding the working set with `initial_active`
/// (indices into the inequality rows, typically a previous solution's
/// `active_set`). An unusable seed silently falls back to a cold start.
pub fn solve_qp_warm(p: &QpProblem, initial_active: Option<&[usize]>) -> Result<QpSolution, SolverError> {
    p.check()?;
    let n = p.num_vars();
    let m_in = p.ineq_h.len();
    let m_eq = p.eq_b.len();

    let (hessian, psd_repaired) = repair_hessian(&p.hessian)?;
    let eq_rows = independent_rows(&p.eq_a, &(0..m_eq).collect::<Vec<_>>(), &[]);

    let ws = Workspace { p, hessian: &hessian, eq_rows: &eq_rows };

    let warm = initial_active.and_then(|seed| ws.warm_point(seed));
    let (mut x, mut working) = match warm {
        Some(start) => start,
        None => match ws.phase_one()? {
            Some(start) => start,
            None => {
                return Ok(QpSolution::failed(SolveStatus::Infeasible, n, m_in, m_eq, 0));
            }
        },
    };

    let max_iter = 20 * (n + m_in) + 200;
    let mut iterations = 0;
    let mut status = SolveStatus::IterLimit;
    while iterations < max_iter {
        iterations += 1;
        let grad = &hessian * &x + &p.linear;
        let Some((step, mult)) = ws.eqp_step(&grad, &working) else {
            break;
        };
        let scale = 1.0 + x.amax();
        if step.amax() <= 1e-12 * scale {
            let grad_scale = 1.0 + grad.amax();
            // Multipliers of the working inequalities follow the equality block.
            let ineq_mult = &mult.as_slice()[eq_rows.len()..];
            let mut worst: Option<(usize, f64)> = None;
            for (pos, &mu) in ineq_mult.iter().enumerate() {
                if mu < -1e-11 * grad_scale {
                    match worst {
                        Some((_, w)) if mu >= w => {}
                        _ => worst = Some((pos, mu)),
                    }
                }
            }
            match worst {
                None => {
                    status = SolveStatus::Optimal;
                    break;
                }
                Some((pos, _)) => {
                    working.remove(pos);
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking: Option<usize> = None;
            let gp = &p.ineq_g * &step;
            let gx = &p.ineq_g * &x;
            let step_norm = step.norm();
            for i in 0..m_in {
                if working.contains(&i) {
                    continue;
                }
                let row_norm = p.ineq_g.row(i).norm();
                if gp[i] > 1e-13 * row_norm * step_norm {
                    let a = ((p.ineq_h[i] - gx[i]) / gp[i]).max(0.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
            }
            x += alpha * &step;
            if let Some(i) = blocking {
                working.push(i);
            }
        }
    }

    if status != SolveStatus::Optimal {
        return Ok(QpSolution::failed(status, n, m_in, m_eq, iterations));
    }

    // Re-solve the final equality-constrained problem from scratch so that
    // the answer depends only on the working set.
    if let Some((xp, mult)) = ws.eqp_direct(&working) {
        if ws.max_violation(&xp) <= PRIMAL_TOL {
            x = xp;
            let _ = mult;
        }
    }
    let (dual_eq, dual_ineq) = ws.multipliers(&x, &working);
    let (stat, prim, comp, _) = kkt_residuals(p, &x, &dual_ineq, &dual_eq);
    working.sort_unstable();
    Ok(QpSolution {
        objective: p.objective(&x),
        x_opt: x,
        status,
        dual_ineq,
        dual_eq,
        kkt_residual: stat.max(prim).max(comp),
        active_set: working,
        iterations,
        psd_repaired,
    })
}

fn repair_hessian(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool), SolverError> {
    let n = q.nrows();
    if n == 0 {
        return Ok((q.clone(), false));
    }
    let sym = (q + q.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let floor = PSD_FLOOR * max_eig.max(1.0);
    if min_eig < -floor {
        return Err(SolverError::NotConvex(min_eig));
    }
    if min_eig >= floor {
        return Ok((sym, false));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(((&repaired + repaired.transpose()) * 0.5, true))
}

/// Greedy selection of rows from `candidates` that are linearly independent
/// of each other and of `base` rows (by Gram–Schmidt on normalized rows).
fn independent_rows(mat: &DMatrix<f64>, candidates: &[usize], base: &[DVector<f64>]) -> Vec<usize> {
    let mut ortho: Vec<DVector<f64>> = base.to_vec();
    let mut picked = Vec::new();
    for &i in candidates {
        let row = mat.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row / norm;
        for o in &ortho {
            let d = v.dot(o);
            v -= d * o;
        }
        let r = v.norm();
        if r > 1e-9 {
            ortho.push(v / r);
            picked.push(i);
        }
    }
    picked
}

struct Workspace<'a> {
    p: &'a QpProblem,
    hessian: &'a DMatrix<f64>,
    eq_rows: &'a [usize],
}

impl Workspace<'_> {
    fn constraint_matrix(&self, working: &[usize]) -> DMatrix<f64> {
        let n = self.p.num_vars();
        let rows = self.eq_rows.len() + working.len();
        let mut c = DMatrix::zeros(rows, n);
        for (r, &i) in self.eq_rows.iter().enumerate() {
            c.row_mut(r).copy_from(&self.p.eq_a.row(i));
        }
        for (r, &i) in working.iter().enumerate() {
            c.row_mut(self.eq_rows.len() + r).copy_from(&self.p.ineq_g.row(i));
        }
        c
    }

    fn constraint_rhs(&self, working: &[usize]) -> DVector<f64> {
        let mut d = DVector::zeros(self.eq_rows.len() + working.len());
        for (r, &i) in self.eq_rows.iter().enumerate() {
            d[r] = self.p.eq_b[i];
        }
        for (r, &i) in working.iter().enumerate() {
            d[self.eq_rows.len() + r] = self.p.ineq_h[i];
        }
        d
    }

    /// Solve `[Q Cᵀ; C 0] [x; ν] = [top; bottom]` with one refinement pass.
    fn kkt_solve(&self, c: &DMatrix<f64>, top: &DVector<f64>, bottom: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.p.num_vars();
        let k = c.nrows();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.hessian);
        kkt.view_mut((0, n), (n, k)).copy_from(&c.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(c);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(top);
        rhs.rows_mut(n, k).copy_from(bottom);
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        let resid = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
    }

    /// Step `p` minimizing the model with the working rows held tight.
    fn eqp_step(&self, grad: &DVector<f64>, working: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let c = self.constraint_matrix(working);
        let zeros = DVector::zeros(c.nrows());
        self.kkt_solve(&c, &(-grad), &zeros)
    }

    /// Minimizer of the QP with the working rows as equalities.
    fn eqp_direct(&self, working: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let c = self.constraint_matrix(working);
        let d = self.constraint_rhs(working);
        self.kkt_solve(&c, &(-self.p.linear.clone()), &d)
    }

    fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v = 0.0f64;
        if self.p.ineq_h.len() > 0 {
            let s = &self.p.ineq_g * x - &self.p.ineq_h;
            v = s.iter().fold(v, |a, &b| a.max(b));
        }
        if self.p.eq_b.len() > 0 {
            v = v.max((&self.p.eq_a * x - &self.p.eq_b).amax());
        }
        v
    }

    fn warm_point(&self, seed: &[usize]) -> Option<(DVector<f64>, Vec<usize>)> {
        let m_in = self.p.ineq_h.len();
        let mut cand: Vec<usize> = seed.iter().copied().filter(|&i| i < m_in).collect();
        cand.sort_unstable();
        cand.dedup();
        let base: Vec<DVector<f64>> = {
            let mut ortho: Vec<DVector<f64>> = Vec::new();
            for &i in self.eq_rows {
                let mut v = self.p.eq_a.row(i).transpose();
                for o in &ortho {
                    let d = v.dot(o);
                    v -= d * o;
                }
                let r = v.norm();
                if r > 1e-12 {
                    ortho.push(v / r);
                }
            }
            ortho
        };
        let working = independent_rows(&self.p.ineq_g, &cand, &base);
        let (x, _) = self.eqp_direct(&working)?;
        if self.max_violation(&x) <= PRIMAL_TOL {
            Some((x, working))
        } else {
            None
        }
    }

    /// Most-interior feasible point: `max t  s.t.  Ĝx + t ≤ ĝ, t ≤ 1, Ax = b`
    /// on unit-normalized rows.
    fn phase_one(&self) -> Result<Option<(DVector<f64>, Vec<usize>)>, SolverError> {
        let p = self.p;
        let n = p.num_vars();
        let m_in = p.ineq_h.len();
        let mut g = DMatrix::zeros(m_in + 1, n + 1);
        let mut h = DVector::zeros(m_in + 1);
        for i in 0..m_in {
            let norm = p.ineq_g.row(i).norm();
            if norm > 0.0 {
                for j in 0..n {
                    g[(i, j)] = p.ineq_g[(i, j)] / norm;
                }
                g[(i, n)] = 1.0;
                h[i] = p.ineq_h[i] / norm;
            } else {
                // 0 ≤ g: satisfied or hopeless, independent of x.
                if p.ineq_h[i] < 0.0 {
                    return Ok(None);
                }
            }
        }
        g[(m_in, n)] = 1.0;
        h[m_in] = 1.0;
        let mut a = DMatrix::zeros(p.eq_b.len(), n + 1);
        a.view_mut((0, 0), (p.eq_b.len(), n)).copy_from(&p.eq_a);
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let lp = solve_lp(&c, (&g, &h), (&a, &p.eq_b))?;
        if lp.status != SolveStatus::Optimal {
            return Ok(None);
        }
        let t = lp.x_opt[n];
        if t < -PRIMAL_TOL {
            return Ok(None);
        }
        let x = lp.x_opt.rows(0, n).into_owned();
        let slack = &p.ineq_g * &x - &p.ineq_h;
        let tight: Vec<usize> = (0..m_in)
            .filter(|&i| slack[i] >= -1e-12 * (1.0 + p.ineq_h[i].abs()))
            .collect();
        let base = self.eq_basis();
        let working = independent_rows(&p.ineq_g, &tight, &base);
        Ok(Some((x, working)))
    }

    fn eq_basis(&self) -> Vec<DVector<f64>> {
        let mut ortho: Vec<DVector<f64>> = Vec::new();
        for &i in self.eq_rows {
            let mut v = self.p.eq_a.row(i).transpose();
            for o in &ortho {
                let d = v.dot(o);
                v -= d * o;
            }
            let r = v.norm();
            if r > 1e-12 {
                ortho.push(v / r);
            }
        }
        ortho
    }

    /// Least-squares multipliers at `x` for the given working set.
    fn multipliers(&self, x: &DVector<f64>, working: &[usize]) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        let grad = &p.hessian * x + &p.linear;
        let c = self.constraint_matrix(working);
        let k = c.nrows();
        let mut dual_eq = DVector::zeros(p.eq_b.len());
        let mut dual_ineq = DVector::zeros(p.ineq_h.len());
        if k == 0 {
            return (dual_eq, dual_ineq);
        }
        // Cᵀν = −grad in the least-squares sense.
        let ct = c.transpose();
        let normal = &c * &ct;
        let rhs = -(&c * &grad);
        let nu = normal.clone().cholesky().map(|ch| ch.solve(&rhs)).or_else(|| normal.lu().solve(&rhs));
        if let Some(nu) = nu {
            for (r, &i) in self.eq_rows.iter().enumerate() {
                dual_eq[i] = nu[r];
            }
            for (r, &i) in working.iter().enumerate() {
                dual_ineq[i] = nu[self.eq_rows.len() + r];
            }
        }
        (dual_eq, dual_ineq)
    }
}
