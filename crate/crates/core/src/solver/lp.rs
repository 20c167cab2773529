use nalgebra::{DMatrix, DVector};

use super::{QpProblem, QpSolution, SolveStatus, SolverError};

const PIVOT_TOL: f64 = 1e-10;
const OPT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 8;

/// Solve `min cᵀx  s.t.  G x ≤ g,  A x = b` with `x` free.
///
/// `ineq` and `eq` are `(matrix, rhs)` pairs; pass zero-row matrices for an
/// absent block. On `Optimal` the returned solution carries the multipliers of
/// both blocks and the tight inequality rows in `active_set`.
pub fn solve_lp(
    c: &DVector<f64>,
    ineq: (&DMatrix<f64>, &DVector<f64>),
    eq: (&DMatrix<f64>, &DVector<f64>),
) -> Result<QpSolution, SolverError> {
    let n = c.len();
    let (g_mat, g_rhs) = ineq;
    let (a_mat, a_rhs) = eq;
    if g_mat.ncols() != n || a_mat.ncols() != n || g_mat.nrows() != g_rhs.len() || a_mat.nrows() != a_rhs.len() {
        return Err(SolverError::Shape);
    }
    let finite = c.iter().chain(g_mat.iter()).chain(g_rhs.iter()).chain(a_mat.iter()).chain(a_rhs.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(SolverError::NonFinite);
    }
    let m_in = g_mat.nrows();
    let m_eq = a_mat.nrows();

    // Row scaling keeps the dual columns O(1).
    let scale_in: Vec<f64> = (0..m_in).map(|i| row_scale(g_mat, i)).collect();
    let scale_eq: Vec<f64> = (0..m_eq).map(|i| row_scale(a_mat, i)).collect();

    let dual = DualForm::build(c, g_mat, g_rhs, &scale_in, a_mat, a_rhs, &scale_eq);
    let outcome = dual.solve();
    let iterations = outcome.iterations;

    let status = match outcome.kind {
        OutcomeKind::Optimal => SolveStatus::Optimal,
        OutcomeKind::Unbounded => SolveStatus::Infeasible,
        OutcomeKind::IterLimit => SolveStatus::IterLimit,
        OutcomeKind::Infeasible => {
            // Dual infeasible: the primal is unbounded unless it is also infeasible.
            if c.iter().all(|&v| v == 0.0) {
                SolveStatus::Infeasible
            } else {
                let zero = DVector::zeros(n);
                let feas = solve_lp(&zero, ineq, eq)?;
                match feas.status {
                    SolveStatus::Optimal => SolveStatus::Unbounded,
                    other => other,
                }
            }
        }
    };
    if status != SolveStatus::Optimal {
        return Ok(QpSolution::failed(status, n, m_in, m_eq, iterations));
    }

    let x = outcome.multipliers;
    let y = &outcome.values;
    let mut dual_ineq = DVector::zeros(m_in);
    for i in 0..m_in {
        if scale_in[i] > 0.0 {
            dual_ineq[i] = y[i] * scale_in[i];
        }
    }
    let mut dual_eq = DVector::zeros(m_eq);
    for k in 0..m_eq {
        if scale_eq[k] > 0.0 {
            dual_eq[k] = (y[m_in + k] - y[m_in + m_eq + k]) * scale_eq[k];
        }
    }
    let objective = c.dot(&x);
    let slack = g_mat * &x - g_rhs;
    let active_set: Vec<usize> = (0..m_in)
        .filter(|&i| slack[i].abs() <= 1e-9 * (1.0 + g_rhs[i].abs()))
        .collect();

    let probe = QpProblem::new(DMatrix::zeros(n, n), c.clone())
        .with_eq(a_mat.clone(), a_rhs.clone())
        .with_ineq(g_mat.clone(), g_rhs.clone());
    let (stat, prim, comp, _) = super::kkt_residuals(&probe, &x, &dual_ineq, &dual_eq);

    Ok(QpSolution {
        x_opt: x,
        objective,
        status,
        dual_ineq,
        dual_eq,
        kkt_residual: stat.max(prim).max(comp),
        active_set,
        iterations,
        psd_repaired: false,
    })
}

fn row_scale(m: &DMatrix<f64>, i: usize) -> f64 {
    let norm = m.row(i).amax();
    if norm > 0.0 {
        1.0 / norm
    } else {
        0.0
    }
}

/// Dual of the primal LP in standard form `min costᵀy, M y = rhs, y ≥ 0`.
///
/// Columns are `[G rows | A rows | −A rows]`, one row per primal variable.
struct DualForm {
    mat: DMatrix<f64>,
    rhs: DVector<f64>,
    cost: DVector<f64>,
}

impl DualForm {
    fn build(
        c: &DVector<f64>,
        g: &DMatrix<f64>,
        g_rhs: &DVector<f64>,
        scale_in: &[f64],
        a: &DMatrix<f64>,
        a_rhs: &DVector<f64>,
        scale_eq: &[f64],
    ) -> Self {
        let n = c.len();
        let (m_in, m_eq) = (g.nrows(), a.nrows());
        let cols = m_in + 2 * m_eq;
        let mut mat = DMatrix::zeros(n, cols);
        let mut cost = DVector::zeros(cols);
        for i in 0..m_in {
            let s = scale_in[i];
            for j in 0..n {
                mat[(j, i)] = g[(i, j)] * s;
            }
            cost[i] = g_rhs[i] * s;
            if s == 0.0 {
                // Zero row `0 ≤ g`: infeasible iff g < 0; the column is inert.
                cost[i] = if g_rhs[i] < 0.0 { -1.0 } else { 0.0 };
            }
        }
        for k in 0..m_eq {
            let s = scale_eq[k];
            for j in 0..n {
                mat[(j, m_in + k)] = a[(k, j)] * s;
                mat[(j, m_in + m_eq + k)] = -a[(k, j)] * s;
            }
            cost[m_in + k] = a_rhs[k] * s;
            cost[m_in + m_eq + k] = -a_rhs[k] * s;
            if s == 0.0 {
                let bad = a_rhs[k] != 0.0;
                cost[m_in + k] = if bad { -a_rhs[k].abs() } else { 0.0 };
                cost[m_in + m_eq + k] = 0.0;
            }
        }
        let rhs = -c.clone();
        Self { mat, rhs, cost }
    }

    fn solve(&self) -> Outcome {
        let rows = self.mat.nrows();
        let cols = self.mat.ncols();
        if rows == 0 {
            // No primal variables: feasible iff every constraint cost is non-negative.
            let bad = self.cost.iter().any(|&v| v < 0.0);
            return Outcome {
                kind: if bad { OutcomeKind::Unbounded } else { OutcomeKind::Optimal },
                values: DVector::zeros(cols),
                multipliers: DVector::zeros(0),
                iterations: 0,
            };
        }
        // Phase one: artificials on sign-normalized rows.
        let mut sign = vec![1.0; rows];
        let mut mat = DMatrix::zeros(rows, cols + rows);
        let mut rhs = self.rhs.clone();
        for r in 0..rows {
            if rhs[r] < 0.0 {
                sign[r] = -1.0;
                rhs[r] = -rhs[r];
            }
            for j in 0..cols {
                mat[(r, j)] = sign[r] * self.mat[(r, j)];
            }
            mat[(r, cols + r)] = 1.0;
        }
        let mut cost1 = DVector::zeros(cols + rows);
        for r in 0..rows {
            cost1[cols + r] = 1.0;
        }
        let basis: Vec<usize> = (cols..cols + rows).collect();
        let all_allowed = vec![true; cols + rows];
        let no_fixed = vec![false; cols + rows];
        let max_iter = 50 * (cols + rows) + 200;
        let mut tab = Simplex { mat: &mat, rhs: &rhs, cost: &cost1, enter_ok: &all_allowed, fixed_zero: &no_fixed };
        let p1 = tab.run(basis, max_iter);
        let mut iterations = p1.iterations;
        let basis = match p1.kind {
            RunKind::Optimal => p1.basis,
            RunKind::IterLimit => return Outcome::new(OutcomeKind::IterLimit, cols, rows, iterations),
            RunKind::Unbounded => return Outcome::new(OutcomeKind::IterLimit, cols, rows, iterations),
        };
        let infeas: f64 = basis
            .iter()
            .zip(p1.values.iter())
            .filter(|(&b, _)| b >= cols)
            .map(|(_, v)| v.max(0.0))
            .sum();
        let rhs_scale = 1.0 + rhs.amax();
        if infeas > FEAS_TOL * rhs_scale {
            return Outcome::new(OutcomeKind::Infeasible, cols, rows, iterations);
        }

        // Phase two: artificials may not enter and must stay at zero.
        let mut cost2 = DVector::zeros(cols + rows);
        cost2.rows_mut(0, cols).copy_from(&self.cost);
        let enter_ok: Vec<bool> = (0..cols + rows).map(|j| j < cols).collect();
        let fixed_zero: Vec<bool> = (0..cols + rows).map(|j| j >= cols).collect();
        tab = Simplex { mat: &mat, rhs: &rhs, cost: &cost2, enter_ok: &enter_ok, fixed_zero: &fixed_zero };
        let p2 = tab.run(basis, max_iter);
        iterations += p2.iterations;
        let kind = match p2.kind {
            RunKind::Optimal => OutcomeKind::Optimal,
            RunKind::Unbounded => OutcomeKind::Unbounded,
            RunKind::IterLimit => OutcomeKind::IterLimit,
        };
        if kind != OutcomeKind::Optimal {
            return Outcome::new(kind, cols, rows, iterations);
        }
        let mut values = DVector::zeros(cols);
        for (pos, &b) in p2.basis.iter().enumerate() {
            if b < cols {
                values[b] = p2.values[pos].max(0.0);
            }
        }
        let mut multipliers = p2.multipliers;
        for r in 0..rows {
            multipliers[r] *= sign[r];
        }
        Outcome { kind, values, multipliers, iterations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutcomeKind {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

struct Outcome {
    kind: OutcomeKind,
    values: DVector<f64>,
    multipliers: DVector<f64>,
    iterations: usize,
}

impl Outcome {
    fn new(kind: OutcomeKind, cols: usize, rows: usize, iterations: usize) -> Self {
        Self { kind, values: DVector::zeros(cols), multipliers: DVector::zeros(rows), iterations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunKind {
    Optimal,
    Unbounded,
    IterLimit,
}

struct Run {
    kind: RunKind,
    basis: Vec<usize>,
    values: DVector<f64>,
    multipliers: DVector<f64>,
    iterations: usize,
}

/// Revised simplex on `min costᵀy, mat y = rhs, y ≥ 0` with an explicit basis.
///
/// The basis matrix is refactorized every iteration; bases here have at most a
/// few dozen rows so this is cheaper than maintaining update formulas.
struct Simplex<'a> {
    mat: &'a DMatrix<f64>,
    rhs: &'a DVector<f64>,
    cost: &'a DVector<f64>,
    enter_ok: &'a [bool],
    fixed_zero: &'a [bool],
}

impl Simplex<'_> {
    fn run(&mut self, mut basis: Vec<usize>, max_iter: usize) -> Run {
        let rows = self.mat.nrows();
        let cols = self.mat.ncols();
        let mut in_basis = vec![false; cols];
        for &b in &basis {
            in_basis[b] = true;
        }
        // Columns whose pivot produced a singular basis; cleared once a
        // non-degenerate pivot lands on an invertible basis.
        let mut banned = vec![false; cols];
        let mut recoveries = 0usize;
        let mut previous: Option<(usize, usize, usize)> = None;
        let mut clear_bans = false;
        let mut degenerate_run = 0usize;
        let mut iterations = 0usize;
        loop {
            let bmat = DMatrix::from_fn(rows, rows, |r, c| self.mat[(r, basis[c])]);
            let inv = bmat.try_inverse().filter(|m| m.iter().all(|v| v.is_finite()) && m.amax() < 1e12);
            let Some(inv) = inv else {
                // Undo the last pivot and forbid that entering column for now.
                match previous.take() {
                    Some((l, q, left)) if recoveries < rows + 10 => {
                        in_basis[q] = false;
                        in_basis[left] = true;
                        basis[l] = left;
                        banned[q] = true;
                        clear_bans = false;
                        recoveries += 1;
                        continue;
                    }
                    _ => {
                        return Run { kind: RunKind::IterLimit, basis, values: DVector::zeros(rows), multipliers: DVector::zeros(rows), iterations };
                    }
                }
            };
            if clear_bans {
                banned.iter_mut().for_each(|b| *b = false);
                clear_bans = false;
            }
            let values = &inv * self.rhs;
            let c_b = DVector::from_fn(rows, |r, _| self.cost[basis[r]]);
            let multipliers = inv.transpose() * c_b;
            if iterations >= max_iter {
                return Run { kind: RunKind::IterLimit, basis, values, multipliers, iterations };
            }

            // Pricing: Dantzig, or Bland after a run of degenerate pivots.
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let mut entering: Option<usize> = None;
            let mut best = 0.0;
            for j in 0..cols {
                if in_basis[j] || !self.enter_ok[j] || banned[j] {
                    continue;
                }
                let col = self.mat.column(j);
                let scale = 1.0 + self.cost[j].abs();
                let d = self.cost[j] - col.dot(&multipliers);
                if d < -OPT_TOL * scale {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    let score = d / col.norm().max(1e-300);
                    if score < best {
                        best = score;
                        entering = Some(j);
                    }
                }
            }
            let Some(q) = entering else {
                if banned.iter().any(|&b| b) && recoveries < rows + 10 {
                    banned.iter_mut().for_each(|b| *b = false);
                    recoveries += 1;
                    previous = None;
                    continue;
                }
                return Run { kind: RunKind::Optimal, basis, values, multipliers, iterations };
            };

            let dir = &inv * self.mat.column(q);
            let pivot_tol = PIVOT_TOL * dir.amax().max(1.0);
            // Ratio test. Outside Bland mode a Harris pass relaxes each bound by
            // FEAS_TOL and then takes the largest pivot under that bound, so
            // near-zero basics with tiny pivots do not block.
            let mut min_ratio = f64::INFINITY;
            let mut relaxed = f64::INFINITY;
            let mut ratios = vec![f64::INFINITY; rows];
            for r in 0..rows {
                let d = dir[r];
                let (ratio, loose) = if self.fixed_zero[basis[r]] {
                    if d.abs() > pivot_tol {
                        (0.0, 0.0)
                    } else {
                        continue;
                    }
                } else if d > pivot_tol {
                    (values[r].max(0.0) / d, (values[r].max(0.0) + FEAS_TOL) / d)
                } else {
                    continue;
                };
                ratios[r] = ratio;
                min_ratio = min_ratio.min(ratio);
                relaxed = relaxed.min(loose);
            }
            if !min_ratio.is_finite() {
                return Run { kind: RunKind::Unbounded, basis, values, multipliers, iterations };
            }
            let bound = if bland { min_ratio + 1e-12 * (1.0 + min_ratio) } else { relaxed };
            let mut leave: Option<usize> = None;
            for r in 0..rows {
                if ratios[r] > bound {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some(l) if bland => basis[r] < basis[l],
                    Some(l) => dir[r].abs() > dir[l].abs() || (dir[r].abs() == dir[l].abs() && basis[r] < basis[l]),
                };
                if better {
                    leave = Some(r);
                }
            }
            let l = leave.expect("finite minimum ratio has a row");
            if ratios[l] <= 1e-13 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
                clear_bans = true;
            }
            previous = Some((l, q, basis[l]));
            in_basis[basis[l]] = false;
            in_basis[q] = true;
            basis[l] = q;
            iterations += 1;
        }
    }
}
