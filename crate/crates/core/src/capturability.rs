//! Backward reachability for the switched pendulum.
//!
//! Phase convention: a set "at phase p" holds states about to receive the
//! input of phase `p`. `Pre_p(X)` is the set at phase `p` that one step of
//! phase-`p` dynamics can steer into `X` (a set at phase `p + 1`).
//!
//! The balance tube `B_0 … B_{T_G}` is indexed by phase, with `B_0 = B_{T_G}`.
//! A capturable tube for terminal phase `t` stores `C(0) = B_t, C(1), …`,
//! where `C(k)` is a set at phase `(t − k) mod T_G` obtained as
//! `C(k+1) = Pre_{(t−k−1) mod T_G}(C(k)) ∩ X`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lip::{self, SwitchedLipSystem};
use crate::ocp::{Horizon, Weights};
use crate::polytope::{self, Polytope, PolytopeError, SET_EQUAL_TOL};
use crate::solver::{solve_lp, SolveStatus, SolverError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CapError {
    #[error("balance iteration did not converge within {max_iter} iterations")]
    NonConvergence { max_iter: usize, last: Box<Polytope> },
    #[error("balance iterate became empty at iteration {iteration}")]
    EmptyResult { iteration: usize },
    #[error("sampled state is not feasible for the horizon problem")]
    InfeasibleSample,
    #[error("surrogate bound fails on {violations} of {samples} held-out samples")]
    FitFailure { violations: usize, samples: usize },
    #[error("LP failed with status {0:?}")]
    LpFailure(SolveStatus),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, CapError>;

/// Phase of capturable slice `k` for terminal phase `t`.
pub fn slice_phase(terminal: usize, k: usize, period: usize) -> usize {
    (terminal + period - k % period) % period
}

/// `Pre_p(X) = (X ⊕ (−B ∘ U_p)) ∘ A`.
pub fn pre(x: &Polytope, phase: usize, sys: &SwitchedLipSystem) -> Result<Polytope> {
    pre_with_feet(x, phase, sys, &sys.footsteps)
}

/// [`pre`] with explicit foot positions.
pub fn pre_with_feet(x: &Polytope, phase: usize, sys: &SwitchedLipSystem, feet: &DMatrix<f64>) -> Result<Polytope> {
    let u = lip::input_set_for(&sys.schedule, feet, phase);
    let neg_b = -&sys.b;
    let shifted = x.minkowski_sum(&u.affine_image(&neg_b)?)?;
    Ok(shifted.affine_preimage(&sys.a)?)
}

/// `Pre_p(X) ∩ K`, the constrained variant used by both tube recursions.
pub fn pre_within(x: &Polytope, phase: usize, sys: &SwitchedLipSystem, within: Option<&Polytope>) -> Result<Polytope> {
    let p = pre(x, phase, sys)?;
    Ok(match within {
        Some(k) => p.intersect(k)?,
        None => p,
    })
}

/// `PRE = Pre_0 ∘ … ∘ Pre_{T_G−1}`, a set at phase 0.
pub fn pre_period(x: &Polytope, sys: &SwitchedLipSystem) -> Result<Polytope> {
    pre_period_within(x, sys, None)
}

/// [`pre_period`] with every intermediate stage intersected with `within`.
pub fn pre_period_within(x: &Polytope, sys: &SwitchedLipSystem, within: Option<&Polytope>) -> Result<Polytope> {
    let mut set = x.clone();
    for phase in (0..sys.period()).rev() {
        set = pre_within(&set, phase, sys, within)?;
        if set.is_empty()? {
            return Ok(Polytope::empty(x.dim()));
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TubeKind {
    Balance,
    Capturable,
}

/// Sequence of polytopes indexed by phase (balance) or backward step
/// (capturable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub kind: TubeKind,
    pub gait: lip::GaitName,
    /// Terminal phase of a capturable tube.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_phase: Option<usize>,
    /// Reference footholds, `axes × 4`.
    #[serde(serialize_with = "ser_matrix", deserialize_with = "de_matrix")]
    pub footsteps: DMatrix<f64>,
    pub slices: Vec<Polytope>,
    #[serde(default)]
    pub volumes: Vec<f64>,
}

impl Tube {
    pub fn horizon(&self) -> usize {
        self.slices.len().saturating_sub(1)
    }

    /// Phase of slice `k`.
    pub fn phase_of(&self, k: usize, period: usize) -> usize {
        match (self.kind, self.terminal_phase) {
            (TubeKind::Capturable, Some(t)) => slice_phase(t, k, period),
            _ => k % period,
        }
    }

    /// Monte Carlo volume of every slice.
    pub fn compute_volumes(&mut self, samples: usize, seed: u64) -> Result<()> {
        self.volumes = self
            .slices
            .iter()
            .map(|s| s.volume_mc(samples, seed))
            .collect::<std::result::Result<_, _>>()?;
        Ok(())
    }
}

pub(crate) fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

pub(crate) fn de_matrix<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
    use serde::de::Error;
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    let n = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != n) {
        return Err(D::Error::custom("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

/// Convergence record of the balance iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Monte Carlo volume of each iterate `Ω₀, Ω₁, …`.
    pub iterate_volumes: Vec<f64>,
    pub row_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceOptions {
    pub max_iter: usize,
    /// Fixed-point test tolerance on support values.
    pub tol: f64,
    pub volume_samples: usize,
    pub seed: u64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: SET_EQUAL_TOL, volume_samples: 20_000, seed: 0 }
    }
}

/// Tube of balanced states.
///
/// Iterates `Ω_{k+1} = PRE(Ω_k) ∩ Ω_k` from `Ω₀ = X_T`, with every stage of
/// `PRE` intersected with `X_T` so that intermediate phases stay in the
/// target region too. The fixed point is `B_{T_G}`; earlier slices come from
/// `B_t = Pre_t(B_{t+1}) ∩ X_T`.
pub fn balance_tube(x_t: &Polytope, sys: &SwitchedLipSystem, opts: &BalanceOptions) -> Result<(Tube, BalanceDiagnostics)> {
    let mut diag = BalanceDiagnostics { iterations: 0, converged: false, iterate_volumes: Vec::new(), row_counts: Vec::new() };
    let mut omega = x_t.reduce()?;
    if omega.is_empty()? {
        return Err(CapError::EmptyResult { iteration: 0 });
    }
    diag.iterate_volumes.push(omega.volume_mc(opts.volume_samples, opts.seed)?);
    diag.row_counts.push(omega.num_rows());
    for it in 1..=opts.max_iter {
        let next = pre_period_within(&omega, sys, Some(x_t))?.intersect(&omega)?;
        diag.iterations = it;
        if next.is_empty()? {
            return Err(CapError::EmptyResult { iteration: it });
        }
        diag.iterate_volumes.push(next.volume_mc(opts.volume_samples, opts.seed)?);
        diag.row_counts.push(next.num_rows());
        let done = next.set_equal(&omega, opts.tol)?;
        log::debug!("balance iteration {it}: {} rows, converged={done}", next.num_rows());
        omega = next;
        if done {
            diag.converged = true;
            break;
        }
    }
    if !diag.converged {
        return Err(CapError::NonConvergence { max_iter: opts.max_iter, last: Box::new(omega) });
    }
    let tg = sys.period();
    let mut slices = vec![Polytope::empty(x_t.dim()); tg + 1];
    slices[tg] = omega;
    for t in (0..tg).rev() {
        slices[t] = pre_within(&slices[t + 1], t, sys, Some(x_t))?;
    }
    let mut tube = Tube {
        kind: TubeKind::Balance,
        gait: sys.schedule.name,
        terminal_phase: None,
        footsteps: sys.footsteps.clone(),
        slices,
        volumes: Vec::new(),
    };
    tube.compute_volumes(opts.volume_samples, opts.seed)?;
    Ok((tube, diag))
}

/// Capturable tube `C(0) … C(horizon)` ending in `B_t`.
pub fn capturable_tube(
    balance: &Tube,
    x: &Polytope,
    sys: &SwitchedLipSystem,
    terminal: usize,
    horizon: usize,
    volume_samples: usize,
    seed: u64,
) -> Result<Tube> {
    let tg = sys.period();
    let mut slices = Vec::with_capacity(horizon + 1);
    slices.push(balance.slices[terminal % tg].clone());
    for k in 0..horizon {
        let phase = slice_phase(terminal, k + 1, tg);
        let prev = slices.last().expect("nonempty");
        let next = if prev.is_empty()? { Polytope::empty(x.dim()) } else { pre_within(prev, phase, sys, Some(x))? };
        slices.push(next);
    }
    let mut tube = Tube {
        kind: TubeKind::Capturable,
        gait: sys.schedule.name,
        terminal_phase: Some(terminal % tg),
        footsteps: sys.footsteps.clone(),
        slices,
        volumes: Vec::new(),
    };
    if volume_samples > 0 {
        tube.compute_volumes(volume_samples, seed)?;
    }
    Ok(tube)
}

/// Capturable tubes for every terminal phase, computed in parallel.
pub fn capturable_tubes(
    balance: &Tube,
    x: &Polytope,
    sys: &SwitchedLipSystem,
    horizon: usize,
    volume_samples: usize,
    seed: u64,
) -> Result<Vec<Tube>> {
    (0..sys.period())
        .into_par_iter()
        .map(|t| capturable_tube(balance, x, sys, t, horizon, volume_samples, seed))
        .collect()
}

/// Feasibility of the lifted one-period problem: is there `x ∈ X` and a
/// stacked weight sequence starting at phase `start` with `Āx + B̄v ∈ X`?
pub fn gamma_nonempty(x: &Polytope, sys: &SwitchedLipSystem, start: usize) -> Result<bool> {
    let n = sys.state_dim();
    let lifted = sys.lift_period(start);
    let (sg, sh, sa, sb) = lifted.simplex_constraints();
    let nv = sg.ncols();
    let m = x.num_rows();
    let mut g = DMatrix::zeros(2 * m + nv, n + nv);
    let mut h = DVector::zeros(2 * m + nv);
    g.view_mut((0, 0), (m, n)).copy_from(x.normals());
    h.rows_mut(0, m).copy_from(x.offsets());
    g.view_mut((m, 0), (m, n)).copy_from(&(x.normals() * &lifted.abar));
    g.view_mut((m, n), (m, nv)).copy_from(&(x.normals() * &lifted.bbar));
    h.rows_mut(m, m).copy_from(x.offsets());
    g.view_mut((2 * m, n), (nv, nv)).copy_from(&sg);
    h.rows_mut(2 * m, nv).copy_from(&sh);
    let mut a = DMatrix::zeros(sa.nrows(), n + nv);
    a.view_mut((0, n), (sa.nrows(), nv)).copy_from(&sa);
    let sol = solve_lp(&DVector::zeros(n + nv), (&g, &h), (&a, &sb))?;
    match sol.status {
        SolveStatus::Optimal => Ok(true),
        SolveStatus::Infeasible => Ok(false),
        other => Err(CapError::LpFailure(other)),
    }
}

/// Contact weights at phase `phase` steering `x` into `target`, if any
/// (feasibility LP).
pub fn one_step_input(
    x: &DVector<f64>,
    phase: usize,
    sys: &SwitchedLipSystem,
    feet: &DMatrix<f64>,
    target: &Polytope,
) -> Result<Option<DVector<f64>>> {
    let legs = sys.schedule.stance_legs(phase);
    let nv = legs.len();
    let ax = &sys.a * x;
    let mut cols = DMatrix::zeros(sys.state_dim(), nv);
    for (j, &leg) in legs.iter().enumerate() {
        cols.set_column(j, &(&sys.b * feet.column(leg)));
    }
    let m = target.num_rows();
    let mut g = DMatrix::zeros(m + nv, nv);
    let mut h = DVector::zeros(m + nv);
    g.view_mut((0, 0), (m, nv)).copy_from(&(target.normals() * &cols));
    h.rows_mut(0, m).copy_from(&(target.offsets() - target.normals() * &ax));
    g.view_mut((m, 0), (nv, nv)).copy_from(&(-DMatrix::identity(nv, nv)));
    let a = DMatrix::from_element(1, nv, 1.0);
    let b = DVector::from_element(1, 1.0);
    let sol = solve_lp(&DVector::zeros(nv), (&g, &h), (&a, &b))?;
    match sol.status {
        SolveStatus::Optimal => {
            let mut lam = DVector::zeros(4);
            for (j, &leg) in legs.iter().enumerate() {
                lam[leg] = sol.x_opt[j];
            }
            Ok(Some(lam))
        }
        SolveStatus::Infeasible => Ok(None),
        other => Err(CapError::LpFailure(other)),
    }
}

/// Every slice shifted by `ΔW`; footholds shifted by `Δw`.
pub fn translate_tube(tube: &Tube, delta_w: &DVector<f64>) -> Result<Tube> {
    let shift = lip::state_shift(delta_w);
    let slices = tube.slices.iter().map(|s| s.translate(&shift)).collect::<std::result::Result<_, _>>()?;
    let mut footsteps = tube.footsteps.clone();
    for mut col in footsteps.column_iter_mut() {
        col += delta_w;
    }
    Ok(Tube { slices, footsteps, ..tube.clone() })
}

/// Quadratic upper bound `V(x) ≤ [x;1]ᵀ P [x;1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurrogate {
    #[serde(rename = "P", serialize_with = "ser_matrix", deserialize_with = "de_matrix")]
    pub p: DMatrix<f64>,
}

impl QuadraticSurrogate {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let z = homogeneous(x);
        z.dot(&(&self.p * &z))
    }
}

fn homogeneous(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n + 1, |i, _| if i < n { x[i] } else { 1.0 })
}

/// Settings for [`fit_surrogate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub samples: usize,
    pub holdout: usize,
    pub boundary_share: f64,
    pub seed: u64,
    pub weights: Weights,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { samples: 300, holdout: 500, boundary_share: 0.3, seed: 0, weights: Weights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    pub lift: f64,
    pub holdout_samples: usize,
    pub holdout_violations: usize,
}

/// Finite-horizon optimal cost from `x0` at phase `start`: `horizon` steps
/// on the system footholds, running states in `running`, terminal state in
/// `terminal`. `None` when infeasible.
pub fn horizon_cost(
    x0: &DVector<f64>,
    sys: &SwitchedLipSystem,
    start: usize,
    horizon: usize,
    running: &Polytope,
    terminal: &Polytope,
    weights: Weights,
) -> Result<Option<f64>> {
    if horizon == 0 {
        return Ok(terminal.contains_point(x0, 1e-9)?.then(|| weights.qf * x0.norm_squared()));
    }
    let mut h = Horizon::fixed(sys, x0.clone(), start, horizon, weights);
    h.running = Some(running);
    h.terminal = Some(terminal);
    Ok(h.solve(None)?.map(|s| s.cost))
}

/// Fits a PSD quadratic upper bound of the horizon cost over slice `c`
/// (a set at phase `start`), then checks it on held-out samples.
///
/// Least squares on the upper-triangular entries of `P`, reweighting
/// samples the fit undershoots, then eigenvalue clipping and a constant
/// lift that makes the bound hold on every fitting sample.
pub fn fit_surrogate(
    c: &Polytope,
    sys: &SwitchedLipSystem,
    start: usize,
    terminal: &Polytope,
    running: &Polytope,
    horizon: usize,
    opts: &FitOptions,
) -> Result<(QuadraticSurrogate, FitReport)> {
    let n = c.dim();
    let center = c.chebyshev_center()?.ok_or(CapError::InfeasibleSample)?.0;
    let evaluate = |xs: Vec<DVector<f64>>| -> Result<Vec<(DVector<f64>, f64)>> {
        xs.into_par_iter()
            .map(|x| {
                let mut x = x;
                for _ in 0..6 {
                    if let Some(v) = horizon_cost(&x, sys, start, horizon, running, terminal, opts.weights)? {
                        return Ok((x, v));
                    }
                    x = &center + (&x - &center) * 0.9;
                }
                Err(CapError::InfeasibleSample)
            })
            .collect()
    };
    let mut train_pts = vec![center.clone()];
    train_pts.extend(polytope::sample_rays(c, opts.samples, opts.boundary_share, opts.seed)?);
    let train = evaluate(train_pts)?;

    let nf = (n + 1) * (n + 2) / 2;
    let features = |x: &DVector<f64>| -> DVector<f64> {
        let z = homogeneous(x);
        let mut f = DVector::zeros(nf);
        let mut idx = 0;
        for i in 0..=n {
            for j in i..=n {
                f[idx] = if i == j { z[i] * z[i] } else { 2.0 * z[i] * z[j] };
                idx += 1;
            }
        }
        f
    };
    let assemble = |theta: &DVector<f64>| -> DMatrix<f64> {
        let mut p = DMatrix::zeros(n + 1, n + 1);
        let mut idx = 0;
        for i in 0..=n {
            for j in i..=n {
                p[(i, j)] = theta[idx];
                p[(j, i)] = theta[idx];
                idx += 1;
            }
        }
        p
    };
    let phi: Vec<DVector<f64>> = train.iter().map(|(x, _)| features(x)).collect();
    let mut weight = vec![1.0; train.len()];
    let mut theta = DVector::zeros(nf);
    for _ in 0..8 {
        let mut normal = DMatrix::identity(nf, nf) * 1e-10;
        let mut rhs = DVector::zeros(nf);
        for ((f, (_, v)), w) in phi.iter().zip(&train).zip(&weight) {
            normal += f * f.transpose() * *w;
            rhs += f * (*v * *w);
        }
        theta = normal.cholesky().map(|ch| ch.solve(&rhs)).unwrap_or_else(|| DVector::zeros(nf));
        let mut any = false;
        for (i, (f, (_, v))) in phi.iter().zip(&train).enumerate() {
            if f.dot(&theta) < *v {
                weight[i] *= 4.0;
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    let mut p = assemble(&theta);
    let eig = p.clone().symmetric_eigen();
    let clipped = DVector::from_fn(n + 1, |i, _| eig.eigenvalues[i].max(0.0));
    p = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    p = 0.5 * (&p + p.transpose());
    let mut lift = 0.0f64;
    for (x, v) in &train {
        let z = homogeneous(x);
        lift = lift.max(v - z.dot(&(&p * &z)));
    }
    if lift > 0.0 {
        // small relative margin so the bound is not tight on the samples
        lift = lift * 1.05 + 1e-9;
        p[(n, n)] += lift;
    }
    let surrogate = QuadraticSurrogate { p };

    let holdout = evaluate(polytope::sample_rays(c, opts.holdout, opts.boundary_share, opts.seed ^ 0x5eed)?)?;
    let violations = holdout.iter().filter(|(x, v)| surrogate.value(x) < v - 1e-6).count();
    let report = FitReport { samples: train.len(), lift, holdout_samples: holdout.len(), holdout_violations: violations };
    if violations * 100 > holdout.len() {
        return Err(CapError::FitFailure { violations, samples: holdout.len() });
    }
    Ok((surrogate, report))
}

/// Running constraint set: `X_T` with position bounds scaled by
/// `pos_factor` and velocity bounds by `vel_factor` about the box center.
pub fn inflate_target(target_region: &[[f64; 2]], pos_factor: f64, vel_factor: f64) -> Polytope {
    let bounds: Vec<[f64; 2]> = target_region
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let f = if i % 2 == 0 { pos_factor } else { vel_factor };
            let (mid, half) = (0.5 * (b[0] + b[1]), 0.5 * (b[1] - b[0]));
            [mid - f * half, mid + f * half]
        })
        .collect();
    SwitchedLipSystem::box_polytope(&bounds)
}
