//! Switched linear inverted pendulum.
//!
//! State ordering is `(c_x, ċ_x, c_y, ċ_y)`: each horizontal axis owns a
//! contiguous position/velocity pair. The input of a step is the center of
//! pressure `u = Σ λᵢ pᵢ`, a convex combination of the stance feet of the
//! active gait phase.
//!
//! Legs are numbered 1 = front-left, 2 = front-right, 3 = rear-right,
//! 4 = rear-left, so trot pairs the diagonals {1,3} and {2,4}. Code uses
//! zero-based indices `0..4`.
//!
//! A single-axis variant (state `(c, ċ)`, scalar CoP) shares every routine
//! and is used for low-dimensional checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::polytope::{Polytope, VPolytope};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LipError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("gait phase {0} has no stance leg")]
    NoStance(usize),
    #[error("continuous state matrix is singular")]
    Singular,
    #[error("footsteps must be {expected}x4, got {rows}x{cols}")]
    FootstepShape { expected: usize, rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, LipError>;

/// Physical and timing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipParams {
    pub height: f64,
    pub gravity: f64,
    pub dt: f64,
    pub period_steps: usize,
}

impl Default for LipParams {
    fn default() -> Self {
        Self { height: 0.29, gravity: 9.81, dt: 0.05, period_steps: 6 }
    }
}

impl LipParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.height) {
            return Err(LipError::InvalidParam(format!("height must be positive, got {}", self.height)));
        }
        if !ok(self.gravity) {
            return Err(LipError::InvalidParam(format!("gravity must be positive, got {}", self.gravity)));
        }
        if !ok(self.dt) {
            return Err(LipError::InvalidParam(format!("dt must be positive, got {}", self.dt)));
        }
        if self.period_steps == 0 {
            return Err(LipError::InvalidParam("period_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Natural frequency `ω = √(g/h)`.
    pub fn omega(&self) -> f64 {
        (self.gravity / self.height).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitName {
    Trot,
    Bound,
    Pace,
    Custom,
}

impl GaitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            GaitName::Trot => "trot",
            GaitName::Bound => "bound",
            GaitName::Pace => "pace",
            GaitName::Custom => "custom",
        }
    }
}

impl std::str::FromStr for GaitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "trot" => Ok(GaitName::Trot),
            "bound" => Ok(GaitName::Bound),
            "pace" => Ok(GaitName::Pace),
            "custom" => Ok(GaitName::Custom),
            other => Err(format!("unknown gait `{other}`")),
        }
    }
}

/// Periodic contact pattern, one 4-tuple of stance flags per discrete step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSchedule {
    pub name: GaitName,
    pub contacts: Vec<[bool; 4]>,
}

impl GaitSchedule {
    /// Two-beat gait: `first` in stance for the first half of the period,
    /// the complementary legs for the second half.
    pub fn two_beat(name: GaitName, first: [usize; 2], period_steps: usize) -> Result<Self> {
        if period_steps < 2 {
            return Err(LipError::InvalidParam("two-beat gaits need at least 2 steps per period".into()));
        }
        let half = period_steps / 2;
        let contacts = (0..period_steps)
            .map(|k| {
                let mut c = [false; 4];
                for leg in 0..4 {
                    c[leg] = first.contains(&leg) == (k < half);
                }
                c
            })
            .collect();
        Ok(Self { name, contacts })
    }

    pub fn trot(period_steps: usize) -> Result<Self> {
        Self::two_beat(GaitName::Trot, [0, 2], period_steps)
    }

    pub fn bound(period_steps: usize) -> Result<Self> {
        Self::two_beat(GaitName::Bound, [0, 1], period_steps)
    }

    pub fn pace(period_steps: usize) -> Result<Self> {
        Self::two_beat(GaitName::Pace, [0, 3], period_steps)
    }

    pub fn named(name: GaitName, period_steps: usize) -> Result<Self> {
        match name {
            GaitName::Trot => Self::trot(period_steps),
            GaitName::Bound => Self::bound(period_steps),
            GaitName::Pace => Self::pace(period_steps),
            GaitName::Custom => Err(LipError::InvalidParam("custom gaits need explicit contacts".into())),
        }
    }

    pub fn custom(contacts: Vec<[bool; 4]>) -> Result<Self> {
        let s = Self { name: GaitName::Custom, contacts };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contacts.is_empty() {
            return Err(LipError::InvalidParam("gait schedule is empty".into()));
        }
        if let Some(k) = self.contacts.iter().position(|c| !c.iter().any(|&s| s)) {
            return Err(LipError::NoStance(k));
        }
        Ok(())
    }

    pub fn period(&self) -> usize {
        self.contacts.len()
    }

    /// Contact flags at step `k` (taken modulo the period).
    pub fn contacts_at(&self, k: usize) -> [bool; 4] {
        self.contacts[k % self.period()]
    }

    pub fn stance_legs(&self, k: usize) -> Vec<usize> {
        let c = self.contacts_at(k);
        (0..4).filter(|&i| c[i]).collect()
    }

    /// Legs that are in stance at step `k` but were swinging at step `k − 1`.
    pub fn touchdown_legs(&self, k: usize) -> Vec<usize> {
        let p = self.period();
        let now = self.contacts_at(k);
        let before = self.contacts_at(k + p - 1);
        (0..4).filter(|&i| now[i] && !before[i]).collect()
    }
}

/// Continuous dynamics `(A_LIP, B_LIP)` for `axes` horizontal axes.
pub fn build_continuous(params: &LipParams, axes: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let w2 = params.gravity / params.height;
    let mut a = DMatrix::zeros(2 * axes, 2 * axes);
    let mut b = DMatrix::zeros(2 * axes, axes);
    for i in 0..axes {
        a[(2 * i, 2 * i + 1)] = 1.0;
        a[(2 * i + 1, 2 * i)] = w2;
        b[(2 * i + 1, i)] = -w2;
    }
    (a, b)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=24 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Zero-order-hold discretization: `A = e^{A_LIP dt}`,
/// `B = A_LIP⁻¹ (A − I) B_LIP`.
pub fn discretize(a_lip: &DMatrix<f64>, b_lip: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(LipError::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let n = a_lip.nrows();
    let a = expm(&(a_lip * dt));
    let rhs = (&a - DMatrix::identity(n, n)) * b_lip;
    let lu = a_lip.clone().lu();
    if lu.determinant().abs() < 1e-300 {
        return Err(LipError::Singular);
    }
    let b = lu.solve(&rhs).ok_or(LipError::Singular)?;
    Ok((a, b))
}

/// Closed-form discrete matrices built from `cosh`/`sinh`.
pub fn discretize_closed_form(params: &LipParams, axes: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = params.omega();
    let (ch, sh) = ((w * params.dt).cosh(), (w * params.dt).sinh());
    let mut a = DMatrix::zeros(2 * axes, 2 * axes);
    let mut b = DMatrix::zeros(2 * axes, axes);
    for i in 0..axes {
        let (p, v) = (2 * i, 2 * i + 1);
        a[(p, p)] = ch;
        a[(p, v)] = sh / w;
        a[(v, p)] = w * sh;
        a[(v, v)] = ch;
        b[(p, i)] = 1.0 - ch;
        b[(v, i)] = -w * sh;
    }
    (a, b)
}

/// Instantaneous capture point `ξ = c + ċ/ω` for each axis.
pub fn icp(params: &LipParams, state: &DVector<f64>) -> DVector<f64> {
    let axes = state.len() / 2;
    let inv_w = (params.height / params.gravity).sqrt();
    DVector::from_fn(axes, |i, _| state[2 * i] + inv_w * state[2 * i + 1])
}

/// Embedding of a planar shift into state space: `ΔW = E Δw` with zero
/// velocity components.
pub fn position_embedding(axes: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(2 * axes, axes);
    for i in 0..axes {
        e[(2 * i, i)] = 1.0;
    }
    e
}

/// `ΔW = (Δw_x, 0, Δw_y, 0)` (or `(Δw, 0)` for one axis).
pub fn state_shift(delta_w: &DVector<f64>) -> DVector<f64> {
    position_embedding(delta_w.len()) * delta_w
}

/// Discretized switched pendulum with fixed per-phase footholds.
#[derive(Debug, Clone)]
pub struct SwitchedLipSystem {
    pub params: LipParams,
    pub schedule: GaitSchedule,
    /// `axes × 4` foot positions, one column per leg.
    pub footsteps: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub a_cont: DMatrix<f64>,
    pub b_cont: DMatrix<f64>,
}

impl SwitchedLipSystem {
    pub fn new(params: LipParams, schedule: GaitSchedule, footsteps: DMatrix<f64>) -> Result<Self> {
        params.validate()?;
        schedule.validate()?;
        let axes = footsteps.nrows();
        if axes == 0 || axes > 2 || footsteps.ncols() != 4 {
            return Err(LipError::FootstepShape { expected: 2, rows: footsteps.nrows(), cols: footsteps.ncols() });
        }
        if schedule.period() != params.period_steps {
            return Err(LipError::InvalidParam(format!(
                "schedule has {} phases but period_steps is {}",
                schedule.period(),
                params.period_steps
            )));
        }
        let (a_cont, b_cont) = build_continuous(&params, axes);
        let (a, b) = discretize(&a_cont, &b_cont, params.dt)?;
        Ok(Self { params, schedule, footsteps, a, b, a_cont, b_cont })
    }

    /// Number of horizontal axes (2 for the planar model, 1 for the reduced one).
    pub fn axes(&self) -> usize {
        self.footsteps.nrows()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.axes()
    }

    pub fn period(&self) -> usize {
        self.schedule.period()
    }

    /// Same gait and parameters, footholds replaced.
    pub fn with_footsteps(&self, footsteps: DMatrix<f64>) -> Result<Self> {
        if footsteps.shape() != self.footsteps.shape() {
            return Err(LipError::FootstepShape {
                expected: self.axes(),
                rows: footsteps.nrows(),
                cols: footsteps.ncols(),
            });
        }
        Ok(Self { footsteps, ..self.clone() })
    }

    /// Footholds shifted by `Δw`.
    pub fn translated(&self, delta_w: &DVector<f64>) -> Self {
        let mut f = self.footsteps.clone();
        for mut col in f.column_iter_mut() {
            col += delta_w;
        }
        Self { footsteps: f, ..self.clone() }
    }

    /// Admissible CoP set of phase `k`: convex hull of the stance feet.
    pub fn input_set(&self, k: usize) -> VPolytope {
        input_set_for(&self.schedule, &self.footsteps, k)
    }

    /// `B w_σk`: maps the 4-vector of contact weights to the state update,
    /// with zero columns for swinging legs.
    pub fn weight_matrix(&self, k: usize, feet: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.schedule.contacts_at(k);
        let mut w = feet.clone();
        for leg in 0..4 {
            if !c[leg] {
                w.column_mut(leg).fill(0.0);
            }
        }
        &self.b * w
    }

    pub fn step(&self, x: &DVector<f64>, cop: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * cop
    }

    /// Step with contact weights `λ` on the given foot positions.
    pub fn step_weights(&self, x: &DVector<f64>, feet: &DMatrix<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * (feet * lambda)
    }

    /// Lifted one-period map `x⁺ = Ā x + B̄ [λ₀; …; λ_{T_G−1}]` starting at
    /// phase `start`, with the per-phase simplex constraints.
    pub fn lift_period(&self, start: usize) -> LiftedSystem {
        let n = self.state_dim();
        let tg = self.period();
        let mut abar = DMatrix::identity(n, n);
        for _ in 0..tg {
            abar = &self.a * abar;
        }
        let mut bbar = DMatrix::zeros(n, 4 * tg);
        let mut power = DMatrix::identity(n, n);
        for j in (0..tg).rev() {
            let block = &power * self.weight_matrix(start + j, &self.footsteps);
            bbar.view_mut((0, 4 * j), (n, 4)).copy_from(&block);
            power = &power * &self.a;
        }
        let contacts = (0..tg).map(|j| self.schedule.contacts_at(start + j)).collect();
        LiftedSystem { abar, bbar, contacts }
    }

    /// Target region as a box polytope.
    pub fn box_polytope(bounds: &[[f64; 2]]) -> Polytope {
        let lo: Vec<f64> = bounds.iter().map(|b| b[0]).collect();
        let hi: Vec<f64> = bounds.iter().map(|b| b[1]).collect();
        Polytope::from_box(&lo, &hi).expect("matching bound lengths")
    }
}

/// CoP hull of the stance legs of phase `k` for an arbitrary foot matrix.
pub fn input_set_for(schedule: &GaitSchedule, feet: &DMatrix<f64>, k: usize) -> VPolytope {
    let verts = schedule.stance_legs(k).into_iter().map(|leg| feet.column(leg).into_owned()).collect();
    VPolytope::new(verts).expect("validated schedules have stance legs")
}

/// One-period lifted dynamics acting on stacked contact weights.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub abar: DMatrix<f64>,
    pub bbar: DMatrix<f64>,
    /// Stance flags of each stacked 4-block.
    pub contacts: Vec<[bool; 4]>,
}

impl LiftedSystem {
    /// Equality and bound constraints of the stacked simplex
    /// `λⱼ ≥ 0, Σλⱼ = 1, λⱼᵢ = 0 for swing legs`, as `(G, g, A, b)` on `4·T_G` variables.
    pub fn simplex_constraints(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let tg = self.contacts.len();
        let nv = 4 * tg;
        let g = -DMatrix::identity(nv, nv);
        let gh = DVector::zeros(nv);
        let swing: usize = self.contacts.iter().map(|c| c.iter().filter(|s| !**s).count()).sum();
        let mut a = DMatrix::zeros(tg + swing, nv);
        let mut b = DVector::zeros(tg + swing);
        let mut r = tg;
        for (j, c) in self.contacts.iter().enumerate() {
            for leg in 0..4 {
                if c[leg] {
                    a[(j, 4 * j + leg)] = 1.0;
                } else {
                    a[(r, 4 * j + leg)] = 1.0;
                    r += 1;
                }
            }
            b[j] = 1.0;
        }
        (g, gh, a, b)
    }
}

/// Analysis configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LipConfig {
    pub gait: GaitName,
    /// Explicit contact flags per step; required for `custom`, ignored otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contacts: Option<Vec<[bool; 4]>>,
    pub dt: f64,
    pub period_steps: usize,
    pub height: f64,
    pub gravity: f64,
    /// Nominal foot positions, rows x and y, columns legs 1–4.
    pub footsteps: [[f64; 4]; 2],
    /// Per-dimension `[lo, hi]` in state order.
    pub target_region: [[f64; 2]; 4],
}

/// Nominal half-lengths of the default foot rectangle.
pub const DEFAULT_FOOT_HALF_X: f64 = 0.06;
pub const DEFAULT_FOOT_HALF_Y: f64 = 0.04;

impl Default for LipConfig {
    fn default() -> Self {
        let (fx, fy) = (DEFAULT_FOOT_HALF_X, DEFAULT_FOOT_HALF_Y);
        Self {
            gait: GaitName::Trot,
            contacts: None,
            dt: 0.05,
            period_steps: 6,
            height: 0.29,
            gravity: 9.81,
            footsteps: [[fx, fx, -fx, -fx], [fy, -fy, -fy, fy]],
            target_region: [[-0.19, 0.19], [-0.2, 0.2], [-0.11, 0.11], [-0.2, 0.2]],
        }
    }
}

impl LipConfig {
    pub fn params(&self) -> LipParams {
        LipParams { height: self.height, gravity: self.gravity, dt: self.dt, period_steps: self.period_steps }
    }

    pub fn schedule(&self) -> Result<GaitSchedule> {
        match (self.gait, &self.contacts) {
            (GaitName::Custom, Some(c)) => GaitSchedule::custom(c.clone()),
            (GaitName::Custom, None) => Err(LipError::InvalidParam("custom gait needs `contacts`".into())),
            (name, _) => GaitSchedule::named(name, self.period_steps),
        }
    }

    pub fn footstep_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2, 4, |i, j| self.footsteps[i][j])
    }

    pub fn target_polytope(&self) -> Polytope {
        SwitchedLipSystem::box_polytope(&self.target_region)
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        let sched = self.schedule()?;
        if sched.period() != self.period_steps {
            return Err(LipError::InvalidParam("contacts length differs from period_steps".into()));
        }
        if self.footsteps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LipError::InvalidParam("footsteps must be finite".into()));
        }
        // lo > hi is accepted: the target region is then empty, which the
        // analysis reports as such
        for (i, b) in self.target_region.iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite()) {
                return Err(LipError::InvalidParam(format!("target_region[{i}] must be finite")));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SwitchedLipSystem> {
        self.validate()?;
        SwitchedLipSystem::new(self.params(), self.schedule()?, self.footstep_matrix())
    }

    /// Single-axis reduction along x (legs keep their x coordinates).
    pub fn build_single_axis(&self) -> Result<SwitchedLipSystem> {
        self.validate()?;
        let feet = DMatrix::from_fn(1, 4, |_, j| self.footsteps[0][j]);
        SwitchedLipSystem::new(self.params(), self.schedule()?, feet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn continuous_blocks() {
        let p = LipParams::default();
        let (a, b) = build_continuous(&p, 2);
        let w2 = a[(1, 0)];
        assert_abs_diff_eq!(w2 * 0.29, 9.81, epsilon = 1e-12);
        assert_abs_diff_eq!(w2, 33.8276, epsilon = 1e-4);
        assert_eq!(a.view((0, 0), (2, 2)), a.view((2, 2), (2, 2)));
        assert_eq!(b[(1, 0)], -w2);
        assert_eq!(b[(3, 1)], -w2);
        let tall = LipParams { height: 1e12, ..p };
        let (a, _) = build_continuous(&tall, 1);
        assert!(a[(1, 0)] < 1e-10);
        assert_eq!(a[(0, 1)], 1.0);
    }

    #[test]
    fn discretization_matches_closed_form() {
        let p = LipParams::default();
        let sys = LipConfig::default().build().unwrap();
        let (ac, bc) = discretize_closed_form(&p, 2);
        assert!((&sys.a - &ac).amax() <= 1e-10);
        assert!((&sys.b - &bc).amax() <= 1e-10);
        assert_abs_diff_eq!(sys.a[(0, 0)], 1.0425833203, epsilon = 1e-9);
        assert_abs_diff_eq!(sys.a[(1, 0)], 1.7153200183, epsilon = 1e-9);
        for k in 1..=10 {
            let q = LipParams { dt: 0.01 * k as f64, ..p };
            let (a_lip, b_lip) = build_continuous(&q, 2);
            let (a, b) = discretize(&a_lip, &b_lip, q.dt).unwrap();
            let (ac, bc) = discretize_closed_form(&q, 2);
            assert!((a - ac).amax() <= 1e-10);
            assert!((b - bc).amax() <= 1e-10);
        }
    }

    #[test]
    fn tiny_step_is_identity() {
        let p = LipParams::default();
        let (a_lip, b_lip) = build_continuous(&p, 2);
        let (a, b) = discretize(&a_lip, &b_lip, 1e-8).unwrap();
        assert!((a - DMatrix::identity(4, 4)).amax() <= 1e-6);
        assert!(b.amax() <= 1e-6);
        assert!(discretize(&a_lip, &b_lip, 0.0).is_err());
    }

    #[test]
    fn schedules() {
        let t = GaitSchedule::trot(6).unwrap();
        assert_eq!(t.stance_legs(0), vec![0, 2]);
        assert_eq!(t.stance_legs(4), vec![1, 3]);
        assert_eq!(t.touchdown_legs(0), vec![0, 2]);
        assert_eq!(t.touchdown_legs(3), vec![1, 3]);
        assert!(t.touchdown_legs(1).is_empty());
        assert_eq!(GaitSchedule::bound(6).unwrap().stance_legs(0), vec![0, 1]);
        assert_eq!(GaitSchedule::pace(6).unwrap().stance_legs(0), vec![0, 3]);
        assert!(GaitSchedule::custom(vec![[false; 4]]).is_err());
        assert_eq!(t.contacts_at(7), t.contacts_at(1));
    }

    #[test]
    fn input_sets() {
        let sys = LipConfig::default().build().unwrap();
        let seg = sys.input_set(0);
        assert_eq!(seg.vertices().len(), 2);
        assert_eq!(seg.vertices()[0], sys.footsteps.column(0).into_owned());
        assert_eq!(seg.vertices()[1], sys.footsteps.column(2).into_owned());
        assert_eq!(sys.input_set(1), sys.input_set(1 + 6));
        let all = GaitSchedule::custom(vec![[true; 4]]).unwrap();
        assert_eq!(input_set_for(&all, &sys.footsteps, 0).vertices().len(), 4);
        let one = GaitSchedule::custom(vec![[false, false, true, false]]).unwrap();
        assert_eq!(input_set_for(&one, &sys.footsteps, 0).vertices().len(), 1);
    }

    #[test]
    fn icp_values() {
        let p = LipParams::default();
        let xi = icp(&p, &DVector::from_row_slice(&[0.0, 1.0, 0.0, 0.0]));
        assert_abs_diff_eq!(xi[0], (0.29f64 / 9.81).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(xi[0], 0.17193, epsilon = 1e-5);
        assert_eq!(xi[1], 0.0);
        let still = icp(&p, &DVector::from_row_slice(&[0.3, 0.0, -0.2, 0.0]));
        assert_eq!(still.as_slice(), &[0.3, -0.2]);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = LipConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: LipConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let partial: LipConfig = serde_json::from_str(r#"{"gait":"pace"}"#).unwrap();
        assert_eq!(partial.gait, GaitName::Pace);
        assert_eq!(partial.dt, 0.05);
        let bad = LipConfig { height: -1.0, ..LipConfig::default() };
        assert!(bad.build().is_err());
        let custom = LipConfig { gait: GaitName::Custom, ..LipConfig::default() };
        assert!(custom.build().is_err());
    }

    #[test]
    fn single_period_lift_is_one_step() {
        let mut cfg = LipConfig::default();
        cfg.gait = GaitName::Custom;
        cfg.period_steps = 1;
        cfg.contacts = Some(vec![[true, false, true, false]]);
        let sys = cfg.build().unwrap();
        let lifted = sys.lift_period(0);
        assert_eq!(lifted.abar, sys.a);
        assert_eq!(lifted.bbar, sys.weight_matrix(0, &sys.footsteps));
    }
}
