mod common;

use nalgebra::{DMatrix, DVector};
use quadcap::lip::position_embedding;
use quadcap::planner::*;
use quadcap::solver::{solve_qp, QpProblem, SolveStatus};

/// Minimizer of the surrogate over the slice, by a direct 4-variable QP.
fn surrogate_minimizer(phase: usize) -> DVector<f64> {
    let a = common::archive();
    let s = a.surrogate(phase);
    let c = a.capture_slice(phase, a.horizon());
    let pxx = s.p.view((0, 0), (4, 4)).into_owned();
    let px = s.p.view((0, 4), (4, 1)).column(0).into_owned();
    let qp = QpProblem::new(2.0 * pxx, 2.0 * px).with_ineq(c.normals().clone(), c.offsets().clone());
    let sol = solve_qp(&qp).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    sol.x_opt
}

fn pushed(phase: usize, dv: [f64; 2]) -> DVector<f64> {
    let a = common::archive();
    let mut x = a.balance_slice(phase).chebyshev_center().unwrap().unwrap().0;
    x[1] += dv[0];
    x[3] += dv[1];
    x
}

#[test]
fn target_shift_vanishes_at_surrogate_minimum() {
    let a = common::archive();
    let sys = common::system();
    let y = surrogate_minimizer(0);
    let zero = DVector::zeros(2);
    let (dw, target) = plan_target(&y, a.capture_slice(0, a.horizon()), a.surrogate(0), &sys.footsteps, &zero, 1e-6).unwrap();
    assert!(dw.amax() <= 1e-3, "{dw}");
    assert!((target - &sys.footsteps).amax() <= 1e-3);
}

#[test]
fn target_shift_recovers_a_known_translation() {
    let a = common::archive();
    let sys = common::system();
    let e = position_embedding(2);
    let y = surrogate_minimizer(3);
    let c = a.capture_slice(3, a.horizon());
    for shift in [[0.1, -0.05], [-0.3, 0.2], [0.0, 0.4]] {
        let s = DVector::from_row_slice(&shift);
        let x = &y + &e * &s;
        let (dw, _) = plan_target(&x, c, a.surrogate(3), &sys.footsteps, &DVector::zeros(2), 1e-6).unwrap();
        assert!((&dw - &s).amax() <= 1e-3, "{dw} vs {s}");
        assert!(c.contains_point(&(&x - &e * &dw), 1e-7).unwrap());
    }
}

#[test]
fn velocity_overflow_is_not_capturable() {
    let a = common::archive();
    let sys = common::system();
    let x = pushed(0, [0.0, 50.0]);
    match plan_target(&x, a.capture_slice(0, a.horizon()), a.surrogate(0), &sys.footsteps, &DVector::zeros(2), 1e-6) {
        Err(PlanError::NotCapturable { distance }) => assert!(distance > 1.0),
        other => panic!("expected NotCapturable, got {other:?}"),
    }
    let err = plan_recovery(a, &sys, &x, 0, &sys.footsteps, &PlanConfig::default()).unwrap_err();
    assert!(matches!(err, PlanError::NotCapturable { .. }));
}

#[test]
fn balanced_state_gives_noop() {
    let a = common::archive();
    let sys = common::system();
    for phase in 0..6 {
        let p = plan_recovery(a, &sys, &pushed(phase, [0.0, 0.0]), phase, &sys.footsteps, &PlanConfig::default()).unwrap();
        assert!(p.noop);
        assert_eq!(p.cost(), 0.0);
        assert!(p.delta_w.amax() < 1e-12);
    }
}

fn check_plan(p: &PlanResult, phase: usize, feet: &DMatrix<f64>, cfg: &PlanConfig) {
    let sys = common::system();
    assert!(!p.noop);
    assert!(p.terminal_member);
    assert_eq!(p.com_trajectory.len(), cfg.horizon + 1);
    assert_eq!(p.footstep_sequence.len(), cfg.horizon);
    // dynamics consistency
    for k in 0..cfg.horizon {
        let next = sys.step_weights(&p.com_trajectory[k], &p.footstep_sequence[k], &p.cop_weights[k]);
        assert!((next - &p.com_trajectory[k + 1]).amax() <= 1e-9);
    }
    // stance feet do not move
    let mut prev = feet.clone();
    for k in 0..cfg.horizon {
        let landing = sys.schedule.touchdown_legs(phase + k);
        for leg in sys.schedule.stance_legs(phase + k) {
            if !landing.contains(&leg) {
                assert_eq!(p.footstep_sequence[k].column(leg), prev.column(leg), "leg {leg} moved at step {k}");
            }
        }
        prev = p.footstep_sequence[k].clone();
    }
    // kinematic box at each touchdown
    if !p.kinematics_relaxed {
        for ev in &p.events {
            let c = &p.com_trajectory[ev.step];
            for (a, b) in cfg.kinematic_box.iter().enumerate() {
                let r = ev.shift[a] - c[2 * a];
                assert!(r >= b[0] - 1e-7 && r <= b[1] + 1e-7, "event {} axis {a}: {r}", ev.index);
            }
        }
    }
    // accepted costs never increase
    for w in p.costs.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs()));
    }
    assert!((1..=cfg.step_count_range[1]).contains(&p.chosen_step_count));
}

#[test]
fn recovery_plans_satisfy_their_invariants() {
    let a = common::archive();
    let sys = common::system();
    let cfg = PlanConfig::default();
    let mut relaxed = 0;
    for phase in 0..6 {
        for dv in [[0.3, 0.0], [0.0, -0.3], [0.5, 0.4], [-0.8, 0.2]] {
            let p = plan_recovery(a, &sys, &pushed(phase, dv), phase, &sys.footsteps, &cfg).unwrap();
            if p.noop {
                // small pushes can stay inside the balance slice
                assert!(a.balance_slice(phase).contains_point(&pushed(phase, dv), 1e-8).unwrap());
                continue;
            }
            check_plan(&p, phase, &sys.footsteps, &cfg);
            relaxed += p.kinematics_relaxed as usize;
        }
    }
    assert!(relaxed <= 12, "{relaxed} of 24 plans needed relaxed kinematics");
}

#[test]
fn plans_are_translation_equivariant() {
    let a = common::archive();
    let sys = common::system();
    let e = position_embedding(2);
    let cfg = PlanConfig::default();
    for (phase, dv) in [(0, [0.4, 0.1]), (2, [-0.2, 0.3])] {
        let x = pushed(phase, dv);
        let base = plan_recovery(a, &sys, &x, phase, &sys.footsteps, &cfg).unwrap();
        let shift = DVector::from_row_slice(&[0.37, -0.21]);
        let mut feet = sys.footsteps.clone();
        for mut col in feet.column_iter_mut() {
            col += &shift;
        }
        let moved = plan_recovery(a, &sys, &(&x + &e * &shift), phase, &feet, &cfg).unwrap();
        assert!((&moved.delta_w - &base.delta_w - &shift).amax() <= 1e-6);
        assert_eq!(moved.chosen_step_count, base.chosen_step_count);
        for (m, b) in moved.com_trajectory.iter().zip(&base.com_trajectory) {
            assert!((m - b - &e * &shift).amax() <= 1e-6);
        }
        for (m, b) in moved.cop_weights.iter().zip(&base.cop_weights) {
            assert!((m - b).amax() <= 1e-6);
        }
    }
}

#[test]
fn planning_is_deterministic() {
    let a = common::archive();
    let sys = common::system();
    let x = pushed(4, [0.6, -0.5]);
    let cfg = PlanConfig::default();
    let p1 = plan_recovery(a, &sys, &x, 4, &sys.footsteps, &cfg).unwrap();
    let p2 = plan_recovery(a, &sys, &x, 4, &sys.footsteps, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(serde_json::to_string(&p1.to_output(0.05)).unwrap(), serde_json::to_string(&p2.to_output(0.05)).unwrap());
}

#[test]
fn frozen_prefix_before_first_touchdown() {
    let a = common::archive();
    let sys = common::system();
    let cfg = PlanConfig::default();
    let t = plan_target_frozen(a, &sys, &pushed(1, [0.3, 0.1]), 1, &sys.footsteps, &cfg).unwrap();
    assert_eq!(t.prefix_steps, 2);
    assert_eq!(t.prefix_weights.len(), 2);
    for lam in &t.prefix_weights {
        assert!((lam.sum() - 1.0).abs() <= 1e-9);
        assert!(lam.min() >= -1e-9);
    }
    let t0 = plan_target_frozen(a, &sys, &pushed(0, [0.3, 0.1]), 0, &sys.footsteps, &cfg).unwrap();
    assert_eq!(t0.prefix_steps, 0);
}
