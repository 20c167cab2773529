//! Closed-loop rollouts of the switched pendulum under push disturbances,
//! and grid sweeps over push velocities.
//!
//! A rollout is judged at the LIP level only: it succeeds once the state
//! stays in the balance tube of its current foothold frame for a full gait
//! period, and fails if it leaves the running set, becomes uncapturable or
//! times out. Whole-body collisions are outside the model.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::TubeArchive;
use crate::lip::{position_embedding, SwitchedLipSystem};
use crate::ocp::Horizon;
use crate::planner::{frame_of, mean_shift, plan_recovery, PlanConfig, PlanError, PlanResult};
use crate::polytope::{Polytope, PolytopeError};
use crate::solver::SolverError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Membership tolerance for "inside the balance tube".
pub const BALANCE_TOL: f64 = 1e-6;
/// Interior margin aimed for by single-step controls.
const STEP_MARGIN: f64 = 1e-4;

/// Instantaneous CoM velocity change applied at the start of a phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushEvent {
    pub phase_index: usize,
    pub dv: [f64; 2],
}

/// Push phase for timing `k` (1-based): touchdown of the first pair, one
/// step into its stance, touchdown of the second pair, one step into its
/// stance. Two-beat gaits only.
pub fn timing_phase(k: usize, period: usize) -> Result<usize> {
    if period < 2 || period % 2 != 0 {
        return Err(SimError::Config(format!("timings need an even gait period, got {period}")));
    }
    let half = period / 2;
    let quarter = (half / 2).max(1).min(half - 1);
    match k {
        1 => Ok(0),
        2 => Ok(quarter),
        3 => Ok(half),
        4 => Ok(half + quarter),
        _ => Err(SimError::Config(format!("timing must be 1..=4, got {k}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulated time in seconds.
    pub horizon_s: f64,
    pub plan: PlanConfig,
    /// Execute plans whose footholds violate the kinematic box.
    pub allow_relaxed: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { horizon_s: 3.0, plan: PlanConfig::default(), allow_relaxed: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NotCapturable,
    /// Only plans violating the kinematic box were found.
    KinematicLimit,
    LeftConstraintSet,
    Timeout,
    Solver(String),
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotCapturable => f.write_str("not_capturable"),
            Self::KinematicLimit => f.write_str("kinematic_limit"),
            Self::LeftConstraintSet => f.write_str("left_constraint_set"),
            Self::Timeout => f.write_str("timeout"),
            Self::Solver(m) => write!(f, "solver: {m}"),
        }
    }
}

/// How the input of a step was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Stay in the balance tube of the current frame.
    Balance,
    /// First step of a fresh recovery plan.
    Plan,
    /// Continue an earlier plan.
    Tail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub push: PushEvent,
    pub success: bool,
    pub reason: Option<FailureReason>,
    /// States at the start of each step, plus the final state.
    pub states: Vec<DVector<f64>>,
    pub phases: Vec<usize>,
    pub feet: Vec<DMatrix<f64>>,
    pub lambdas: Vec<DVector<f64>>,
    pub modes: Vec<StepMode>,
}

impl Rollout {
    /// Time series CSV: one row per applied step.
    pub fn write_csv<W: Write>(&self, dt: f64, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["t", "phase", "c_x", "v_x", "c_y", "v_y"].iter().map(|s| s.to_string()).collect();
        for leg in 0..4 {
            header.push(format!("foot{leg}_x"));
            header.push(format!("foot{leg}_y"));
        }
        for leg in 0..4 {
            header.push(format!("lambda{leg}"));
        }
        header.push("mode".into());
        w.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut row = vec![format!("{:.6}", k as f64 * dt), self.phases.get(k).map_or(String::new(), |p| p.to_string())];
            row.extend(self.states[k].iter().map(|v| format!("{v:.9}")));
            match self.feet.get(k) {
                Some(f) => {
                    for leg in 0..4 {
                        row.push(format!("{:.9}", f[(0, leg)]));
                        row.push(format!("{:.9}", f[(1, leg)]));
                    }
                }
                None => row.extend(std::iter::repeat_n(String::new(), 8)),
            }
            match self.lambdas.get(k) {
                Some(l) => row.extend(l.iter().map(|v| format!("{v:.9}"))),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
            row.push(self.modes.get(k).map_or(String::new(), |m| format!("{m:?}").to_lowercase()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-loop controller state shared by the steps of one rollout.
struct Controller<'a> {
    archive: &'a TubeArchive,
    sys: &'a SwitchedLipSystem,
    cfg: &'a SimConfig,
    centers: Vec<DVector<f64>>,
    e: DMatrix<f64>,
}

enum Decision {
    Apply(DMatrix<f64>, DVector<f64>, StepMode),
    Fail(FailureReason),
}

impl<'a> Controller<'a> {
    fn new(archive: &'a TubeArchive, sys: &'a SwitchedLipSystem, cfg: &'a SimConfig) -> Result<Self> {
        cfg.plan.validate(sys.period(), archive.horizon()).map_err(|e| SimError::Config(e.to_string()))?;
        let centers = (0..sys.period())
            .map(|p| {
                archive.balance_slice(p).chebyshev_center()?.map(|c| c.0).ok_or_else(|| {
                    SimError::Config(format!("balance slice at phase {p} is empty"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { archive, sys, cfg, centers, e: position_embedding(2) })
    }

    fn frame_feet(&self, f: &DVector<f64>) -> DMatrix<f64> {
        let mut feet = self.sys.footsteps.clone();
        for mut col in feet.column_iter_mut() {
            col += f;
        }
        feet
    }

    /// One step from `x` in frame `f` into `target + EF`. Targets a slightly
    /// shrunk copy first so the state keeps off the boundary, then the set
    /// itself, then a slightly inflated copy for states that sit on it.
    fn one_step(&self, x: &DVector<f64>, phase: usize, f: &DVector<f64>, target: &Polytope) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        let shift = &self.e * f;
        let feet = self.frame_feet(f);
        for margin in [-STEP_MARGIN, 0.0, BALANCE_TOL] {
            let offsets = target.offsets().add_scalar(margin);
            let translated = Polytope::new(target.normals().clone(), offsets)?.translate(&shift)?;
            let mut h = Horizon::fixed(self.sys, x.clone(), phase, 1, self.cfg.plan.weights);
            h.feet = vec![feet.clone()];
            h.reference = shift.clone();
            h.terminal_reference = &self.centers[(phase + 1) % self.sys.period()] + &shift;
            h.terminal = Some(&translated);
            if let Some(s) = h.solve(None)? {
                return Ok(Some((feet, s.lambdas[0].clone())));
            }
        }
        Ok(None)
    }

    fn decide(&self, x: &DVector<f64>, phase: usize, feet: &DMatrix<f64>, tail: &mut Option<(PlanResult, usize)>) -> Result<Decision> {
        let frame = frame_of(self.sys, phase, feet);
        if let Some(f) = &frame {
            if self.archive.balance_slice(phase).contains_point(&(x - &self.e * f), BALANCE_TOL)? {
                if let Some((feet, lam)) = self.one_step(x, phase, f, self.archive.balance_slice(phase + 1))? {
                    *tail = None;
                    return Ok(Decision::Apply(feet, lam, StepMode::Balance));
                }
            }
        }
        let mut failure = FailureReason::NotCapturable;
        match plan_recovery(self.archive, self.sys, x, phase, feet, &self.cfg.plan) {
            Ok(plan) if plan.kinematics_relaxed && !self.cfg.allow_relaxed => failure = FailureReason::KinematicLimit,
            Ok(plan) if !plan.cop_weights.is_empty() => {
                let d = Decision::Apply(plan.footstep_sequence[0].clone(), plan.cop_weights[0].clone(), StepMode::Plan);
                *tail = Some((plan, 1));
                return Ok(d);
            }
            Ok(_) | Err(PlanError::NotCapturable { .. }) | Err(PlanError::Infeasible) => {}
            Err(e) => return Ok(Decision::Fail(FailureReason::Solver(e.to_string()))),
        }
        if let Some((plan, k)) = tail.as_mut() {
            if *k < plan.cop_weights.len() {
                let d = Decision::Apply(plan.footstep_sequence[*k].clone(), plan.cop_weights[*k].clone(), StepMode::Tail);
                *k += 1;
                return Ok(d);
            }
        }
        Ok(Decision::Fail(failure))
    }
}

/// Simulates a push applied to the balanced state at the Chebyshev center
/// of the balance slice at the push phase, with nominal feet.
pub fn rollout(archive: &TubeArchive, sys: &SwitchedLipSystem, push: PushEvent, cfg: &SimConfig) -> Result<Rollout> {
    let tg = sys.period();
    if push.phase_index >= tg {
        return Err(SimError::Config(format!("push phase {} is outside the period {tg}", push.phase_index)));
    }
    if !(cfg.horizon_s.is_finite() && cfg.horizon_s > 0.0) {
        return Err(SimError::Config("horizon_s must be positive".into()));
    }
    let ctrl = Controller::new(archive, sys, cfg)?;
    let mut x = ctrl.centers[push.phase_index].clone();
    x[1] += push.dv[0];
    x[3] += push.dv[1];
    rollout_from(&ctrl, x, push)
}

/// Closed loop from an arbitrary state at `phase` with nominal feet. The
/// recorded push has zero velocity change.
pub fn rollout_state(archive: &TubeArchive, sys: &SwitchedLipSystem, x0: &DVector<f64>, phase: usize, cfg: &SimConfig) -> Result<Rollout> {
    let tg = sys.period();
    if phase >= tg {
        return Err(SimError::Config(format!("phase {phase} is outside the period {tg}")));
    }
    if x0.len() != sys.state_dim() || !(cfg.horizon_s.is_finite() && cfg.horizon_s > 0.0) {
        return Err(SimError::Config("state dimension or horizon_s is invalid".into()));
    }
    let ctrl = Controller::new(archive, sys, cfg)?;
    rollout_from(&ctrl, x0.clone(), PushEvent { phase_index: phase, dv: [0.0, 0.0] })
}

fn rollout_from(ctrl: &Controller, x0: DVector<f64>, push: PushEvent) -> Result<Rollout> {
    let sys = ctrl.sys;
    let tg = sys.period();
    let steps = (ctrl.cfg.horizon_s / sys.params.dt).round() as usize;
    let mut out = Rollout {
        push,
        success: false,
        reason: None,
        states: Vec::new(),
        phases: Vec::new(),
        feet: Vec::new(),
        lambdas: Vec::new(),
        modes: Vec::new(),
    };
    let mut x = x0;
    let mut feet = sys.footsteps.clone();
    let mut phase = push.phase_index;
    let mut tail: Option<(PlanResult, usize)> = None;
    let mut balanced_run = 0;
    for _ in 0..=steps {
        out.states.push(x.clone());
        let frame = frame_of(sys, phase, &feet);
        let balanced = match &frame {
            Some(f) => ctrl.archive.balance_slice(phase).contains_point(&(&x - &ctrl.e * f), BALANCE_TOL)?,
            None => false,
        };
        balanced_run = if balanced { balanced_run + 1 } else { 0 };
        if balanced_run >= tg {
            out.success = true;
            return Ok(out);
        }
        if out.lambdas.len() == steps {
            break;
        }
        let decision = ctrl.decide(&x, phase, &feet, &mut tail)?;
        // an uncapturable push is reported as such even when it also
        // leaves the running set; while a plan is in effect the set may
        // also be anchored at the plan's target frame
        let current = frame.unwrap_or_else(|| mean_shift(sys, phase, &feet));
        let planned = matches!(decision, Decision::Apply(_, _, StepMode::Plan | StepMode::Tail));
        let mut references = vec![current];
        if let (Some((p, _)), true) = (&tail, planned) {
            references.push(p.delta_w.clone());
        }
        let mut outside = true;
        for r in &references {
            outside &= ctrl.archive.running.max_violation(&(&x - &ctrl.e * r)) > BALANCE_TOL;
        }
        if !matches!(decision, Decision::Fail(_)) && outside {
            out.reason = Some(FailureReason::LeftConstraintSet);
            return Ok(out);
        }
        match decision {
            Decision::Apply(f, lam, mode) => {
                x = sys.step_weights(&x, &f, &lam);
                out.phases.push(phase);
                out.feet.push(f.clone());
                out.lambdas.push(lam);
                out.modes.push(mode);
                feet = f;
                phase = (phase + 1) % tg;
            }
            Decision::Fail(r) => {
                out.reason = Some(r);
                return Ok(out);
            }
        }
    }
    out.reason = Some(FailureReason::Timeout);
    Ok(out)
}

/// Push-velocity grid, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: [f64; 3],
    pub y: [f64; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x: [-1.5, 1.5, 0.1], y: [-1.5, 1.5, 0.1] }
    }
}

impl GridSpec {
    /// Parses `"x0:x1:dx,y0:y1:dy"`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || SimError::Config(format!("grid `{s}` is not of the form x0:x1:dx,y0:y1:dy"));
        let axes: Vec<&str> = s.split(',').collect();
        if axes.len() != 2 {
            return Err(bad());
        }
        let mut parsed = [[0.0; 3]; 2];
        for (a, part) in axes.iter().enumerate() {
            let v: Vec<f64> = part.split(':').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            if v.len() != 3 {
                return Err(bad());
            }
            parsed[a] = [v[0], v[1], v[2]];
        }
        let g = Self { x: parsed[0], y: parsed[1] };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.x, self.y] {
            if r.iter().any(|v| !v.is_finite()) || r[1] < r[0] || (r[2] <= 0.0 && r[1] > r[0]) {
                return Err(SimError::Config("grid ranges must be finite with lo <= hi and a positive step".into()));
            }
        }
        Ok(())
    }

    fn values(r: [f64; 3]) -> Vec<f64> {
        if r[1] == r[0] {
            return vec![r[0]];
        }
        let count = ((r[1] - r[0]) / r[2] + 1e-9).floor() as usize + 1;
        // snap to the step grid so 0 appears exactly when it is a grid point
        (0..count).map(|i| ((r[0] + i as f64 * r[2]) * 1e9).round() / 1e9).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::values(self.x)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::values(self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub dv: [f64; 2],
    pub success: bool,
    pub reason: Option<FailureReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub gait: String,
    pub timing: usize,
    pub phase: usize,
    pub grid: GridSpec,
    /// Row-major: `cells[iy * nx + ix]`.
    pub cells: Vec<SweepCell>,
    pub nx: usize,
    pub ny: usize,
}

impl SweepResult {
    /// `mask[iy][ix]`.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.cells.chunks(self.nx).map(|row| row.iter().map(|c| c.success).collect()).collect()
    }

    pub fn successes(&self) -> usize {
        self.cells.iter().filter(|c| c.success).count()
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &SweepCell {
        &self.cells[iy * self.nx + ix]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dv_x", "dv_y", "success", "reason"])?;
        for c in &self.cells {
            let reason = c.reason.as_ref().map_or(String::new(), |r| r.to_string());
            w.write_record([format!("{}", c.dv[0]), format!("{}", c.dv[1]), c.success.to_string(), reason])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One rollout per grid cell, pushed at the phase of `timing`.
pub fn sweep(archive: &TubeArchive, sys: &SwitchedLipSystem, timing: usize, grid: &GridSpec, cfg: &SimConfig) -> Result<SweepResult> {
    grid.validate()?;
    let phase = timing_phase(timing, sys.period())?;
    let ctrl = Controller::new(archive, sys, cfg)?;
    let (xs, ys) = (grid.xs(), grid.ys());
    let pushes: Vec<[f64; 2]> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
    let cells = pushes
        .par_iter()
        .map(|&dv| {
            let push = PushEvent { phase_index: phase, dv };
            let mut x = ctrl.centers[phase].clone();
            x[1] += dv[0];
            x[3] += dv[1];
            let r = rollout_from(&ctrl, x, push)?;
            Ok(SweepCell { dv, success: r.success, reason: r.reason })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        gait: sys.schedule.name.as_str().to_string(),
        timing,
        phase,
        grid: *grid,
        cells,
        nx: xs.len(),
        ny: ys.len(),
    })
}
