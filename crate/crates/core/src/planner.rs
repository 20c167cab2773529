//! Online push-recovery planning on top of the offline tubes.
//!
//! A disturbed state is first matched to a shifted copy of the capturable
//! slice: the shift `Δw` of the whole foothold pattern is the target. The
//! CoM trajectory and the footholds of the upcoming touchdowns are then
//! found by alternating a CoM QP (footholds fixed) and a footstep QP (CoM
//! fixed), for a range of step counts.
//!
//! Footholds change only at touchdown events. Each event places the legs
//! that touch down at `nominal + d` for a planar shift `d`; legs already in
//! stance keep their position until they lift off. At a touchdown phase the
//! landing legs are still free, so the first event can be the current step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::TubeArchive;
use crate::capturability::QuadraticSurrogate;
use crate::lip::{position_embedding, SwitchedLipSystem};
use crate::ocp::{Horizon, HorizonSolution, Weights};
use crate::polytope::{Polytope, PolytopeError, MEMBERSHIP_TOL};
use crate::solver::{solve_lp, solve_qp, QpProblem, SolveStatus, SolverError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("state is not capturable by any foothold shift (distance {distance:.3e})")]
    NotCapturable { distance: f64 },
    #[error("invalid plan configuration: {0}")]
    Config(String),
    #[error("plan constraints are infeasible")]
    Infeasible,
    #[error("gait has no touchdown within one period")]
    NoTouchdown,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, PlanError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// CoM planning horizon `N_P` in steps.
    pub horizon: usize,
    /// Inclusive range of step counts tried.
    pub step_count_range: [usize; 2],
    pub max_iter: usize,
    /// CoM QP weights.
    pub weights: Weights,
    /// `Q_FH = footstep_weight · I`.
    pub footstep_weight: f64,
    /// Per-axis `[lo, hi]` of a foothold relative to the CoM plus the leg's
    /// nominal offset.
    pub kinematic_box: [[f64; 2]; 2],
    /// Per-axis bound on the shift between consecutive touchdowns.
    pub step_reach: Option<f64>,
    /// Weight pulling the target shift toward the current one.
    pub target_regularization: f64,
    /// Relative cost change that ends the alternation.
    pub tol: f64,
    /// Terminal CoM reference relative to `ΔW`; default is the Chebyshev
    /// center of the terminal balance slice with zero velocity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_offset: Option<[f64; 4]>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            step_count_range: [1, 4],
            max_iter: 5,
            weights: Weights::default(),
            footstep_weight: 1.0,
            kinematic_box: [[-0.15, 0.15], [-0.15, 0.15]],
            step_reach: Some(0.3),
            target_regularization: 1e-6,
            tol: 1e-6,
            terminal_offset: None,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self, period: usize, tube_horizon: usize) -> Result<()> {
        let bad = |m: String| Err(PlanError::Config(m));
        if self.horizon < period {
            return bad(format!("horizon {} is shorter than the gait period {period}", self.horizon));
        }
        if self.horizon > tube_horizon {
            return bad(format!("horizon {} exceeds the capturable-tube horizon {tube_horizon}", self.horizon));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        let [lo, hi] = self.step_count_range;
        if lo == 0 || lo > hi {
            return bad("step_count_range must satisfy 1 <= lo <= hi".into());
        }
        if self.kinematic_box.iter().any(|b| !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1])) {
            return bad("kinematic box must be nonempty".into());
        }
        let w = self.weights;
        let nonneg = [w.q, w.r, w.qf, self.footstep_weight, self.target_regularization, self.tol];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("weights and tolerances must be finite and non-negative".into());
        }
        if self.step_reach.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
            return bad("step_reach must be positive".into());
        }
        Ok(())
    }
}

/// One touchdown within the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// 1-based event index.
    pub index: usize,
    /// Step offset from the planning instant.
    pub step: usize,
    pub legs: Vec<usize>,
    /// Planar shift of the landing legs from their nominal positions.
    pub shift: [f64; 2],
    /// Placed at the target shift.
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// State already balanced in the current frame; nothing to plan.
    pub noop: bool,
    pub phase: usize,
    pub delta_w: DVector<f64>,
    pub target_footsteps: DMatrix<f64>,
    pub events: Vec<StepEvent>,
    /// Foot positions in effect at each step.
    pub footstep_sequence: Vec<DMatrix<f64>>,
    pub com_trajectory: Vec<DVector<f64>>,
    pub cop_weights: Vec<DVector<f64>>,
    /// Accepted CoM QP costs of the chosen step count.
    pub costs: Vec<f64>,
    pub iterations_used: usize,
    pub chosen_step_count: usize,
    pub converged: bool,
    /// No candidate met the kinematic box; the frame-fixed target plan is
    /// returned instead.
    pub kinematics_relaxed: bool,
    pub terminal_member: bool,
    /// Steps before the first touchdown.
    pub prefix_steps: usize,
}

impl PlanResult {
    pub fn cost(&self) -> f64 {
        self.costs.last().copied().unwrap_or(0.0)
    }
}

/// Serializable form of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub delta_w: [f64; 2],
    pub target_footsteps: [[f64; 4]; 2],
    pub steps: Vec<PlannedStep>,
    /// Rows `[t, c_x, ċ_x, c_y, ċ_y]`.
    pub com: Vec<[f64; 5]>,
    pub lambda: Vec<[f64; 4]>,
    pub diagnostics: PlanDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub k: usize,
    pub switch_time: f64,
    pub legs: Vec<usize>,
    pub shift: [f64; 2],
    pub pinned: bool,
    /// Foot positions from this touchdown on, rows x and y.
    pub w: [[f64; 4]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub noop: bool,
    pub phase: usize,
    pub prefix_steps: usize,
    pub chosen_step_count: usize,
    pub iterations_used: usize,
    pub costs: Vec<f64>,
    pub converged: bool,
    pub kinematics_relaxed: bool,
    pub terminal_member: bool,
}

fn rows_2x4(m: &DMatrix<f64>) -> [[f64; 4]; 2] {
    let mut out = [[0.0; 4]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

impl PlanResult {
    pub fn to_output(&self, dt: f64) -> PlanOutput {
        PlanOutput {
            delta_w: [self.delta_w[0], self.delta_w[1]],
            target_footsteps: rows_2x4(&self.target_footsteps),
            steps: self
                .events
                .iter()
                .map(|e| PlannedStep {
                    k: e.step,
                    switch_time: e.step as f64 * dt,
                    legs: e.legs.clone(),
                    shift: e.shift,
                    pinned: e.pinned,
                    w: rows_2x4(&self.footstep_sequence[e.step]),
                })
                .collect(),
            com: self
                .com_trajectory
                .iter()
                .enumerate()
                .map(|(k, x)| [k as f64 * dt, x[0], x[1], x[2], x[3]])
                .collect(),
            lambda: self.cop_weights.iter().map(|l| [l[0], l[1], l[2], l[3]]).collect(),
            diagnostics: PlanDiagnostics {
                noop: self.noop,
                phase: self.phase,
                prefix_steps: self.prefix_steps,
                chosen_step_count: self.chosen_step_count,
                iterations_used: self.iterations_used,
                costs: self.costs.clone(),
                converged: self.converged,
                kinematics_relaxed: self.kinematics_relaxed,
                terminal_member: self.terminal_member,
            },
        }
    }
}

/// Legs whose position defines the current frame: stance legs, or at a
/// touchdown the legs that are about to lift off.
pub fn frame_legs(sys: &SwitchedLipSystem, phase: usize) -> Vec<usize> {
    let tg = sys.period();
    if sys.schedule.touchdown_legs(phase).is_empty() {
        sys.schedule.stance_legs(phase)
    } else {
        sys.schedule.stance_legs(phase + tg - 1)
    }
}

/// Common shift of the frame legs from nominal, if they share one.
pub fn frame_of(sys: &SwitchedLipSystem, phase: usize, feet: &DMatrix<f64>) -> Option<DVector<f64>> {
    let legs = frame_legs(sys, phase);
    let first = *legs.first()?;
    let shift = feet.column(first) - sys.footsteps.column(first);
    let same = legs.iter().all(|&l| (feet.column(l) - sys.footsteps.column(l) - &shift).amax() <= 1e-9);
    same.then_some(shift)
}

/// Mean shift of the frame legs from nominal.
pub fn mean_shift(sys: &SwitchedLipSystem, phase: usize, feet: &DMatrix<f64>) -> DVector<f64> {
    let legs = frame_legs(sys, phase);
    let mut s = DVector::zeros(sys.axes());
    for &l in &legs {
        s += feet.column(l) - sys.footsteps.column(l);
    }
    if legs.is_empty() {
        s
    } else {
        s / legs.len() as f64
    }
}

/// Touchdown steps `(offset, legs)` with `offset < horizon`.
pub fn touchdowns(sys: &SwitchedLipSystem, phase: usize, horizon: usize) -> Vec<(usize, Vec<usize>)> {
    (0..horizon)
        .filter_map(|s| {
            let legs = sys.schedule.touchdown_legs(phase + s);
            (!legs.is_empty()).then_some((s, legs))
        })
        .collect()
}

/// Foot positions at each of `horizon` steps after applying `events`
/// (`(offset, legs, shift)`) to the current feet.
pub fn feet_sequence(
    sys: &SwitchedLipSystem,
    feet: &DMatrix<f64>,
    events: &[(usize, Vec<usize>, DVector<f64>)],
    horizon: usize,
) -> Vec<DMatrix<f64>> {
    let mut current = feet.clone();
    let mut out = Vec::with_capacity(horizon);
    let mut next = 0;
    for s in 0..horizon {
        while next < events.len() && events[next].0 == s {
            let (_, legs, d) = &events[next];
            for &l in legs {
                current.set_column(l, &(sys.footsteps.column(l) + d));
            }
            next += 1;
        }
        out.push(current.clone());
    }
    out
}

/// Target shift for a state at a touchdown phase: minimizes the surrogate
/// of `x − EΔw` subject to `x − EΔw ∈ C`. Returns `Δw` and the target
/// footholds `w_nominal + Δw`.
pub fn plan_target(
    x: &DVector<f64>,
    c: &Polytope,
    surrogate: &QuadraticSurrogate,
    w_nominal: &DMatrix<f64>,
    current_shift: &DVector<f64>,
    regularization: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    let t = solve_target(&TargetQp {
        base: x.clone(),
        gain: DMatrix::zeros(n, 0),
        simplex: (DMatrix::zeros(0, 0), DVector::zeros(0)),
        slice: c,
        running: Vec::new(),
        surrogate,
        current_shift,
        regularization,
        input_weight: 0.0,
    })?;
    let mut target = w_nominal.clone();
    for mut col in target.column_iter_mut() {
        col += &t.delta_w;
    }
    Ok((t.delta_w, target))
}

/// Target computed through a frozen prefix: until the first touchdown the
/// stance legs stay where they are, so the prefix weights are optimized
/// jointly with `Δw` and the surrogate is evaluated at the touchdown state.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPlan {
    pub delta_w: DVector<f64>,
    pub prefix_steps: usize,
    pub prefix_weights: Vec<DVector<f64>>,
    pub cost: f64,
}

pub fn plan_target_frozen(
    archive: &TubeArchive,
    sys: &SwitchedLipSystem,
    x: &DVector<f64>,
    phase: usize,
    feet: &DMatrix<f64>,
    cfg: &PlanConfig,
) -> Result<TargetPlan> {
    let tg = sys.period();
    let j0 = touchdowns(sys, phase, tg + 1).first().ok_or(PlanError::NoTouchdown)?.0;
    let t = archive.horizon();
    let slice = archive.capture_slice(phase + j0, t);
    let surrogate = archive.surrogate(phase + j0);
    let current = mean_shift(sys, phase, feet);
    let n = x.len();
    let (base, gain, simplex, running, condensed) = if j0 == 0 {
        (x.clone(), DMatrix::zeros(n, 0), (DMatrix::zeros(0, 0), DVector::zeros(0)), Vec::new(), None)
    } else {
        let mut h = Horizon::fixed(sys, x.clone(), phase, j0, cfg.weights);
        h.feet = vec![feet.clone(); j0];
        let c = h.condense();
        let free = &c.phi * x;
        let base = free.rows(n * (j0 - 1), n).into_owned();
        let gain = c.g.rows(n * (j0 - 1), n).into_owned();
        let running: Vec<(DVector<f64>, DMatrix<f64>)> = (1..j0)
            .map(|k| (free.rows(n * (k - 1), n).into_owned(), c.g.rows(n * (k - 1), n).into_owned()))
            .collect();
        let simplex = c.simplex_rows();
        (base, gain, simplex, running, Some(c))
    };
    let sol = solve_target(&TargetQp {
        base,
        gain,
        simplex,
        slice,
        running: running.iter().map(|(b, g)| (b, g, &archive.running)).collect(),
        surrogate,
        current_shift: &current,
        regularization: cfg.target_regularization,
        input_weight: cfg.weights.r,
    })?;
    let prefix_weights = condensed.map(|c| c.expand(&sol.lambda)).unwrap_or_default();
    Ok(TargetPlan { delta_w: sol.delta_w, prefix_steps: j0, prefix_weights, cost: sol.cost })
}

struct TargetQp<'a> {
    /// `x_touchdown = base + gain λ`.
    base: DVector<f64>,
    gain: DMatrix<f64>,
    simplex: (DMatrix<f64>, DVector<f64>),
    slice: &'a Polytope,
    /// Prefix states `b + G λ` that must stay in the shifted running set.
    running: Vec<(&'a DVector<f64>, &'a DMatrix<f64>, &'a Polytope)>,
    surrogate: &'a QuadraticSurrogate,
    current_shift: &'a DVector<f64>,
    regularization: f64,
    input_weight: f64,
}

struct TargetSolution {
    delta_w: DVector<f64>,
    lambda: DVector<f64>,
    cost: f64,
}

fn solve_target(p: &TargetQp) -> Result<TargetSolution> {
    let n = p.base.len();
    let axes = n / 2;
    let nl = p.gain.ncols();
    let nv = axes + nl;
    let e = position_embedding(axes);
    // y = x_touchdown − EΔw = M v + base
    let mut m = DMatrix::zeros(n, nv);
    m.view_mut((0, 0), (n, axes)).copy_from(&(-&e));
    m.view_mut((0, axes), (n, nl)).copy_from(&p.gain);
    let pm = &p.surrogate.p;
    let pxx = pm.view((0, 0), (n, n)).into_owned();
    let px = pm.view((0, n), (n, 1)).into_owned();
    let p0 = pm[(n, n)];
    let mut hessian = 2.0 * m.transpose() * &pxx * &m;
    let mut linear = 2.0 * m.transpose() * (&pxx * &p.base + &px);
    for i in 0..axes {
        hessian[(i, i)] += 2.0 * p.regularization;
        linear[i] -= 2.0 * p.regularization * p.current_shift[i];
    }
    for i in axes..nv {
        hessian[(i, i)] += 2.0 * p.input_weight;
    }
    hessian = 0.5 * (&hessian + hessian.transpose());
    let constant =
        p.base.dot(&(&pxx * &p.base)) + 2.0 * px.column(0).dot(&p.base) + p0 + p.regularization * p.current_shift.norm_squared();

    let (g, h, relax) = target_rows(p, &m, &e, nv);
    let (eq_a, eq_b) = if nl > 0 {
        let mut a = DMatrix::zeros(p.simplex.0.nrows(), nv);
        a.view_mut((0, axes), (p.simplex.0.nrows(), nl)).copy_from(&p.simplex.0);
        (a, p.simplex.1.clone())
    } else {
        (DMatrix::zeros(0, nv), DVector::zeros(0))
    };
    let qp = QpProblem::new(hessian, linear).with_eq(eq_a.clone(), eq_b.clone()).with_ineq(g.clone(), h.clone());
    let sol = solve_qp(&qp)?;
    match sol.status {
        SolveStatus::Optimal => Ok(TargetSolution {
            delta_w: sol.x_opt.rows(0, axes).into_owned(),
            lambda: sol.x_opt.rows(axes, nl).into_owned(),
            cost: sol.objective + constant,
        }),
        SolveStatus::Infeasible => Err(PlanError::NotCapturable { distance: capture_distance(&g, &h, &relax, &eq_a, &eq_b)? }),
        other => Err(SolverError::Stalled(other).into()),
    }
}

/// Inequalities of the target QP: slice membership, shifted running set on
/// the prefix, and `λ ≥ 0`. The flags mark set rows, which the distance LP
/// may relax.
fn target_rows(p: &TargetQp, m: &DMatrix<f64>, e: &DMatrix<f64>, nv: usize) -> (DMatrix<f64>, DVector<f64>, Vec<bool>) {
    let axes = e.ncols();
    let nl = nv - axes;
    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    for r in 0..p.slice.num_rows() {
        let hr = p.slice.normals().row(r);
        rows.push(((hr * m).transpose(), p.slice.offsets()[r] - (hr * &p.base)[0], true));
    }
    for (b, gk, set) in &p.running {
        let mut mk = DMatrix::zeros(b.len(), nv);
        mk.view_mut((0, 0), (b.len(), axes)).copy_from(&(-e));
        mk.view_mut((0, axes), (b.len(), nl)).copy_from(*gk);
        for r in 0..set.num_rows() {
            let hr = set.normals().row(r);
            rows.push(((hr * &mk).transpose(), set.offsets()[r] - (hr * *b)[0], true));
        }
    }
    for i in 0..nl {
        let mut row = DVector::zeros(nv);
        row[axes + i] = -1.0;
        rows.push((row, 0.0, false));
    }
    let mut g = DMatrix::zeros(rows.len(), nv);
    let mut h = DVector::zeros(rows.len());
    for (i, (r, off, _)) in rows.iter().enumerate() {
        g.set_row(i, &r.transpose());
        h[i] = *off;
    }
    (g, h, rows.iter().map(|r| r.2).collect())
}

/// Smallest uniform relaxation `t` of the set rows that makes the target
/// problem feasible. Set rows have unit normals, so `t` is a distance in
/// state units.
fn capture_distance(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    relax: &[bool],
    eq_a: &DMatrix<f64>,
    eq_b: &DVector<f64>,
) -> Result<f64> {
    let nv = g.ncols();
    let mut gg = DMatrix::zeros(g.nrows() + 1, nv + 1);
    gg.view_mut((0, 0), (g.nrows(), nv)).copy_from(g);
    for (i, &r) in relax.iter().enumerate() {
        if r {
            gg[(i, nv)] = -1.0;
        }
    }
    // t ≥ 0 keeps the LP bounded below
    gg[(g.nrows(), nv)] = -1.0;
    let mut hh = DVector::zeros(g.nrows() + 1);
    hh.rows_mut(0, g.nrows()).copy_from(h);
    let mut aa = DMatrix::zeros(eq_a.nrows(), nv + 1);
    aa.view_mut((0, 0), (eq_a.nrows(), nv)).copy_from(eq_a);
    let mut c = DVector::zeros(nv + 1);
    c[nv] = 1.0;
    let sol = solve_lp(&c, (&gg, &hh), (&aa, eq_b))?;
    Ok(match sol.status {
        SolveStatus::Optimal => sol.x_opt[nv],
        _ => f64::INFINITY,
    })
}

/// CoM trajectory for a fixed foothold sequence (`h.feet`).
pub fn plan_com(h: &Horizon) -> Result<HorizonSolution> {
    h.solve(None)?.ok_or(PlanError::Infeasible)
}

/// Footstep update for the free touchdowns of a candidate plan.
#[derive(Debug, Clone)]
pub struct FootstepRequest<'a> {
    /// Current shifts of the free touchdowns, in event order.
    pub previous: &'a [DVector<f64>],
    /// Planar CoM position at each free touchdown.
    pub com_at_switch: &'a [DVector<f64>],
    /// Shift of the pinned touchdowns.
    pub target: &'a DVector<f64>,
    /// Shift of the feet the first touchdown steps away from.
    pub start: &'a DVector<f64>,
    pub weight: f64,
    pub kinematic_box: [[f64; 2]; 2],
    pub step_reach: Option<f64>,
}

/// Minimizes `Σ ‖δⱼ‖²` over the free shifts subject to the kinematic box
/// around the CoM at each touchdown and the reach between consecutive
/// touchdowns, ending at the target.
pub fn plan_footsteps(req: &FootstepRequest) -> Result<Vec<DVector<f64>>> {
    let m = req.previous.len();
    if req.com_at_switch.len() != m {
        return Err(PlanError::Config("one CoM position per free touchdown is required".into()));
    }
    let axes = req.target.len();
    if let Some(reach) = req.step_reach {
        if m == 0 && (req.target - req.start).amax() > reach + 1e-12 {
            return Err(PlanError::Infeasible);
        }
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let nv = m * axes;
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut bound = |coeffs: &[(usize, f64)], rhs: f64| {
        let mut r = DVector::zeros(nv);
        for &(i, c) in coeffs {
            r[i] += c;
        }
        rows.push((r, rhs));
    };
    for j in 0..m {
        for a in 0..axes {
            let i = j * axes + a;
            // lo ≤ prev + δ − c ≤ hi
            let base = req.previous[j][a] - req.com_at_switch[j][a];
            let [lo, hi] = req.kinematic_box[a.min(1)];
            bound(&[(i, 1.0)], hi - base);
            bound(&[(i, -1.0)], base - lo);
        }
    }
    if let Some(reach) = req.step_reach {
        for j in 0..=m {
            for a in 0..axes {
                // |d_j − d_{j−1}| ≤ reach with d_0 = start and d_{m+1} = target
                let mut coeffs = Vec::new();
                let mut constant = 0.0;
                if j < m {
                    coeffs.push((j * axes + a, 1.0));
                    constant += req.previous[j][a];
                } else {
                    constant += req.target[a];
                }
                if j == 0 {
                    constant -= req.start[a];
                } else {
                    coeffs.push(((j - 1) * axes + a, -1.0));
                    constant -= req.previous[j - 1][a];
                }
                let neg: Vec<(usize, f64)> = coeffs.iter().map(|&(i, c)| (i, -c)).collect();
                bound(&coeffs, reach - constant);
                bound(&neg, reach + constant);
            }
        }
    }
    let mut g = DMatrix::zeros(rows.len(), nv);
    let mut h = DVector::zeros(rows.len());
    for (i, (r, v)) in rows.iter().enumerate() {
        g.set_row(i, &r.transpose());
        h[i] = *v;
    }
    let qp = QpProblem::new(DMatrix::identity(nv, nv) * (2.0 * req.weight.max(1e-12)), DVector::zeros(nv)).with_ineq(g, h);
    let sol = solve_qp(&qp)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(PlanError::Infeasible),
        other => return Err(SolverError::Stalled(other).into()),
    }
    Ok((0..m).map(|j| req.previous[j].clone() + sol.x_opt.rows(j * axes, axes)).collect())
}

/// States whose planar CoM lies in `d − box`, i.e. a foot at `nominal + d`
/// is inside the kinematic box.
fn kinematic_set(d: &DVector<f64>, kbox: &[[f64; 2]; 2], n: usize) -> Polytope {
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for a in 0..d.len() {
        lo[2 * a] = d[a] - kbox[a.min(1)][1];
        hi[2 * a] = d[a] - kbox[a.min(1)][0];
    }
    let rows: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let mut normals = DMatrix::zeros(2 * rows.len(), n);
    let mut offsets = DVector::zeros(2 * rows.len());
    for (k, &i) in rows.iter().enumerate() {
        normals[(2 * k, i)] = 1.0;
        offsets[2 * k] = hi[i];
        normals[(2 * k + 1, i)] = -1.0;
        offsets[2 * k + 1] = -lo[i];
    }
    Polytope::new(normals, offsets).expect("finite box rows")
}

fn in_box(d: &DVector<f64>, c: &DVector<f64>, kbox: &[[f64; 2]; 2]) -> bool {
    (0..d.len()).all(|a| {
        let r = d[a] - c[2 * a];
        r >= kbox[a.min(1)][0] - 1e-9 && r <= kbox[a.min(1)][1] + 1e-9
    })
}

struct Context<'a> {
    sys: &'a SwitchedLipSystem,
    x: &'a DVector<f64>,
    phase: usize,
    feet: &'a DMatrix<f64>,
    cfg: &'a PlanConfig,
    delta_w: DVector<f64>,
    start: DVector<f64>,
    events: Vec<(usize, Vec<usize>)>,
    running: Polytope,
    terminal: Polytope,
    x_d: DVector<f64>,
    reference: DVector<f64>,
}

struct Candidate {
    step_count: usize,
    shifts: Vec<DVector<f64>>,
    solution: HorizonSolution,
    costs: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl Context<'_> {
    fn shifted_events(&self, free: &[DVector<f64>]) -> Vec<(usize, Vec<usize>, DVector<f64>)> {
        self.events
            .iter()
            .enumerate()
            .map(|(j, (s, legs))| (*s, legs.clone(), free.get(j).cloned().unwrap_or_else(|| self.delta_w.clone())))
            .collect()
    }

    fn horizon(&self, free: &[DVector<f64>], kinematics: bool) -> Horizon<'_> {
        let n = self.x.len();
        let events = self.shifted_events(free);
        let mut h = Horizon::fixed(self.sys, self.x.clone(), self.phase, self.cfg.horizon, self.cfg.weights);
        h.feet = feet_sequence(self.sys, self.feet, &events, self.cfg.horizon);
        h.reference = self.reference.clone();
        h.terminal_reference = self.x_d.clone();
        h.running = Some(&self.running);
        h.terminal = Some(&self.terminal);
        if kinematics {
            h.extra = events
                .iter()
                .filter(|(s, _, _)| *s >= 1)
                .map(|(s, _, d)| (*s, kinematic_set(d, &self.cfg.kinematic_box, n)))
                .collect();
        }
        h
    }

    /// A step count is usable when every free touchdown lies inside the
    /// horizon and the legs in stance at the horizon end were placed by
    /// pinned touchdowns.
    fn valid(&self, step_count: usize) -> bool {
        let free = step_count - 1;
        if free > self.events.len() {
            return false;
        }
        let np = self.cfg.horizon;
        let landing = self.sys.schedule.touchdown_legs(self.phase + np);
        self.sys.schedule.stance_legs(self.phase + np).iter().all(|leg| {
            landing.contains(leg)
                || self.events.iter().rposition(|(_, legs)| legs.contains(leg)).is_some_and(|j| j >= free)
        })
    }

    fn run(&self, step_count: usize, init: &HorizonSolution) -> Result<Option<Candidate>> {
        let free = step_count - 1;
        let kbox = &self.cfg.kinematic_box;
        if let Some((0, _)) = self.events.get(free) {
            if !in_box(&self.delta_w, self.x, kbox) {
                return Ok(None);
            }
        }
        let planar = |x: &DVector<f64>| DVector::from_iterator(x.len() / 2, x.iter().step_by(2).copied());
        let mut shifts: Vec<DVector<f64>> = self.events[..free].iter().map(|(s, _)| planar(&init.states[*s])).collect();
        let mut traj = init.clone();
        let mut best: Option<(HorizonSolution, Vec<DVector<f64>>)> = None;
        let mut costs = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..self.cfg.max_iter {
            iterations += 1;
            let com: Vec<DVector<f64>> = self.events[..free].iter().map(|(s, _)| planar(&traj.states[*s])).collect();
            let req = FootstepRequest {
                previous: &shifts,
                com_at_switch: &com,
                target: &self.delta_w,
                start: &self.start,
                weight: self.cfg.footstep_weight,
                kinematic_box: *kbox,
                step_reach: self.cfg.step_reach,
            };
            let updated = match plan_footsteps(&req) {
                Ok(u) => u,
                Err(PlanError::Infeasible) => break,
                Err(e) => return Err(e),
            };
            let Some(sol) = self.horizon(&updated, true).solve(None)? else { break };
            if let Some(&last) = costs.last() {
                if sol.cost > last + 1e-9 * (1.0 + f64::abs(last)) {
                    break;
                }
            }
            let change = costs.last().map(|&c: &f64| (c - sol.cost).abs() / c.abs().max(1.0));
            costs.push(sol.cost);
            shifts = updated;
            traj = sol.clone();
            best = Some((sol, shifts.clone()));
            if change.is_some_and(|c| c < self.cfg.tol) {
                converged = true;
                break;
            }
        }
        Ok(best.map(|(solution, shifts)| Candidate { step_count, shifts, solution, costs, iterations, converged }))
    }
}

/// Push-recovery plan from state `x` at `phase` with the current feet.
pub fn plan_recovery(
    archive: &TubeArchive,
    sys: &SwitchedLipSystem,
    x: &DVector<f64>,
    phase: usize,
    feet: &DMatrix<f64>,
    cfg: &PlanConfig,
) -> Result<PlanResult> {
    cfg.validate(sys.period(), archive.horizon())?;
    if sys.axes() != 2 || x.len() != 4 || feet.shape() != (2, 4) {
        return Err(PlanError::Config("planning needs a two-axis system".into()));
    }
    let phase = phase % sys.period();
    let e = position_embedding(2);
    if let Some(f) = frame_of(sys, phase, feet) {
        if archive.balance_slice(phase).contains_point(&(x - &e * &f), MEMBERSHIP_TOL)? {
            return Ok(noop_plan(sys, x, phase, feet, f));
        }
    }
    let target = plan_target_frozen(archive, sys, x, phase, feet, cfg)?;
    let dw = target.delta_w.clone();
    let shift = &e * &dw;
    let np = cfg.horizon;
    let j0 = target.prefix_steps;
    let terminal_k = archive.horizon() + j0 - np;
    let terminal = archive.capture_slice(phase + np, terminal_k).translate(&shift)?;
    let x_d = match cfg.terminal_offset {
        Some(o) => DVector::from_row_slice(&o) + &shift,
        None => {
            let b = archive.balance_slice(phase + j0 + archive.horizon());
            let (center, _) = b.chebyshev_center()?.ok_or(PlanError::Infeasible)?;
            let mut xd = shift.clone();
            xd[0] += center[0];
            xd[2] += center[2];
            xd
        }
    };
    let ctx = Context {
        sys,
        x,
        phase,
        feet,
        cfg,
        start: mean_shift(sys, phase, feet),
        events: touchdowns(sys, phase, np),
        running: archive.running.translate(&shift)?,
        terminal,
        x_d,
        reference: shift.clone(),
        delta_w: dw,
    };
    let init = ctx.horizon(&[], false).solve(None)?.ok_or(PlanError::Infeasible)?;

    let [lo, hi] = cfg.step_count_range;
    let mut chosen: Option<Candidate> = None;
    for n in lo..=hi {
        if !ctx.valid(n) {
            continue;
        }
        let Some(c) = ctx.run(n, &init)? else { continue };
        let better = match &chosen {
            None => true,
            Some(b) => c.solution.cost < b.solution.cost - 1e-9 * (1.0 + b.solution.cost.abs()),
        };
        if better {
            chosen = Some(c);
        }
    }
    let relaxed = chosen.is_none();
    let c = chosen.unwrap_or(Candidate {
        step_count: 1,
        shifts: Vec::new(),
        costs: vec![init.cost],
        solution: init,
        iterations: 0,
        converged: true,
    });
    Ok(ctx.finish(c, relaxed, j0))
}

impl Context<'_> {
    fn finish(&self, c: Candidate, relaxed: bool, j0: usize) -> PlanResult {
        let events = self.shifted_events(&c.shifts);
        let free = c.shifts.len();
        let sol = c.solution;
        let last = &sol.states[self.cfg.horizon];
        let terminal_member = self.terminal.max_violation(last) <= 1e-6;
        PlanResult {
            noop: false,
            phase: self.phase,
            target_footsteps: shifted_feet(&self.sys.footsteps, &self.delta_w),
            delta_w: self.delta_w.clone(),
            events: events
                .iter()
                .enumerate()
                .map(|(j, (s, legs, d))| StepEvent {
                    index: j + 1,
                    step: *s,
                    legs: legs.clone(),
                    shift: [d[0], d[1]],
                    pinned: j >= free,
                })
                .collect(),
            footstep_sequence: feet_sequence(self.sys, self.feet, &events, self.cfg.horizon),
            com_trajectory: sol.states,
            cop_weights: sol.lambdas,
            costs: c.costs,
            iterations_used: c.iterations,
            chosen_step_count: c.step_count,
            converged: c.converged,
            kinematics_relaxed: relaxed,
            terminal_member,
            prefix_steps: j0,
        }
    }
}

fn shifted_feet(nominal: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = nominal.clone();
    for mut col in out.column_iter_mut() {
        col += d;
    }
    out
}

fn noop_plan(sys: &SwitchedLipSystem, x: &DVector<f64>, phase: usize, feet: &DMatrix<f64>, f: DVector<f64>) -> PlanResult {
    PlanResult {
        noop: true,
        phase,
        target_footsteps: shifted_feet(&sys.footsteps, &f),
        delta_w: f,
        events: Vec::new(),
        footstep_sequence: vec![feet.clone()],
        com_trajectory: vec![x.clone()],
        cop_weights: Vec::new(),
        costs: vec![0.0],
        iterations_used: 0,
        chosen_step_count: 0,
        converged: true,
        kinematics_relaxed: false,
        terminal_member: true,
        prefix_steps: 0,
    }
}
