mod common;

use common::hierarchy::{level, random_level, to_oracle};
use common::oracle::{self, OracleLevel};
use common::*;
use hid_core::cascade::*;
use hid_core::model::{Dynamics, RobotModel, RobotState, GRAVITY};
use hid_core::tasks::*;
use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::Rng;

/// Generic layout of width `d` (at least 6) with no contacts.
fn layout(d: usize) -> VariableLayout {
    VariableLayout::new(d - 6, 0, Formulation::Reduced)
}

fn solve(h: &Hierarchy) -> CascadeSolution {
    solve_hierarchy(h, &CascadeOptions::default()).unwrap()
}

fn assert_matches_oracle(h: &Hierarchy, sol: &CascadeSolution, tol: f64) {
    let levels: Vec<OracleLevel> = h.levels.iter().map(to_oracle).collect();
    let reference = oracle::solve(&levels, h.layout.dim());
    for (r, (got, want)) in sol.levels.iter().zip(&reference.objectives).enumerate() {
        assert!(
            (got.objective - want).abs() <= tol * (1.0 + want),
            "level {}: cascade {} oracle {}",
            r + 1,
            got.objective,
            want
        );
    }
}

#[test]
fn square_equality_level_is_a_linear_solve() {
    let mut rng = rng(3);
    let d = 7;
    let b = random_matrix(d, d, &mut rng, 1.0) + DMatrix::identity(d, d) * 2.0;
    let b0 = random_vector(d, &mut rng, 1.0);
    let h = Hierarchy::new(vec![level(DMatrix::zeros(0, d), DVector::zeros(0), b.clone(), b0.clone())], layout(d));
    let sol = solve(&h);
    let expected = b.lu().solve(&(-b0)).unwrap();
    assert!((&sol.y_star - expected).amax() < 1e-9);
    assert!(sol.levels[0].w.amax() < 1e-9);
    assert_eq!(sol.levels[0].status, LevelStatus::Optimal);
}

#[test]
fn scalar_conflict_keeps_higher_priority() {
    let d = 6;
    let mut row = DMatrix::zeros(1, d);
    row[(0, 0)] = 1.0;
    let l1 = level(DMatrix::zeros(0, d), DVector::zeros(0), row.clone(), DVector::from_element(1, -1.0));
    let l2 = level(DMatrix::zeros(0, d), DVector::zeros(0), row, DVector::zeros(1));
    let sol = solve(&Hierarchy::new(vec![l1, l2], layout(d)));
    assert!((sol.y_star[0] - 1.0).abs() < 1e-12);
    assert!(sol.levels[0].w.amax() < 1e-12);
    assert!((sol.levels[1].w[0].abs() - 1.0).abs() < 1e-12);
    // The remaining coordinates are unconstrained and stay at zero.
    assert!(sol.y_star.rows(1, d - 1).amax() < 1e-12);
}

#[test]
fn inequality_level_slack_is_reported() {
    // y0 ≤ −1 and y0 ≥ 1 cannot both hold: best slack split is 1 each.
    let d = 6;
    let mut a = DMatrix::zeros(2, d);
    a[(0, 0)] = 1.0;
    a[(1, 0)] = -1.0;
    let l = level(a, DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(0, d), DVector::zeros(0));
    let sol = solve(&Hierarchy::new(vec![l], layout(d)));
    assert!(sol.y_star[0].abs() < 1e-9);
    assert!((sol.levels[0].objective - 2.0).abs() < 1e-9);
    assert_eq!(sol.levels[0].status, LevelStatus::Infeasible);
    assert!(!sol.feasible());
}

#[test]
fn two_level_problems_match_brute_force() {
    let mut rng = rng(11);
    for case in 0..100 {
        let d = rng.gen_range(6..=8);
        let l1 = random_level(&mut rng, d, 0..=d - 2, 0..=4);
        let l2 = random_level(&mut rng, d, 1..=d, 0..=4);
        let h = Hierarchy::new(vec![l1, l2], layout(d));
        let sol = solve(&h);
        assert!(sol.levels.iter().all(|l| l.status != LevelStatus::MaxIter), "case {case}");
        assert_matches_oracle(&h, &sol, 1e-7);
    }
}

#[test]
fn three_level_problems_match_brute_force() {
    let mut rng = rng(12);
    for _ in 0..40 {
        let d = rng.gen_range(6..=12);
        let levels = (0..3).map(|_| random_level(&mut rng, d, 0..=d / 2, 0..=3)).collect();
        let h = Hierarchy::new(levels, layout(d));
        assert_matches_oracle(&h, &solve(&h), 1e-7);
    }
}

#[test]
fn lower_levels_cannot_change_higher_slacks() {
    let mut rng = rng(13);
    for _ in 0..10 {
        let d = rng.gen_range(6..=12);
        let base: Vec<AffineTaskSet> = (0..3)
            .map(|_| random_level(&mut rng, d, 1..=d / 2, 0..=3))
            .collect();
        let reference = solve(&Hierarchy::new(base.clone(), layout(d)));
        for _ in 0..50 {
            let r = rng.gen_range(1..3);
            let mut perturbed = base.clone();
            for l in perturbed.iter_mut().skip(r) {
                *l = random_level(&mut rng, d, 1..=d, 0..=3);
            }
            let sol = solve(&Hierarchy::new(perturbed, layout(d)));
            for k in 0..r {
                let (a, b) = (&reference.levels[k], &sol.levels[k]);
                assert!((a.v.norm() - b.v.norm()).abs() < 1e-7);
                assert!((a.w.norm() - b.w.norm()).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn final_point_respects_every_cap() {
    let mut rng = rng(14);
    for _ in 0..50 {
        let d = rng.gen_range(6..=10);
        let levels: Vec<AffineTaskSet> = (0..4)
            .map(|_| random_level(&mut rng, d, 0..=3, 0..=4))
            .collect();
        let h = Hierarchy::new(levels, layout(d));
        let sol = solve(&h);
        for (l, s) in h.levels.iter().zip(&sol.levels) {
            let (eq, ineq) = l.evaluate(&sol.y_star);
            assert!((&eq - &s.w).amax() < 1e-12);
            if ineq.len() > 0 {
                assert!((ineq - &s.v).max() <= 1e-7);
            }
        }
        let report = audit_solution(&h, &sol, None, &AuditTolerances::default());
        assert!(report.flags.iter().all(|f| !matches!(f, AuditFlag::CapViolation { .. })));
    }
}

#[test]
fn appending_a_level_leaves_earlier_costs_unchanged() {
    let mut rng = rng(15);
    for _ in 0..30 {
        let d = rng.gen_range(6..=10);
        let levels: Vec<AffineTaskSet> = (0..4)
            .map(|_| random_level(&mut rng, d, 0..=4, 0..=3))
            .collect();
        let full = solve(&Hierarchy::new(levels.clone(), layout(d)));
        for k in 1..levels.len() {
            let prefix = solve(&Hierarchy::new(levels[..k].to_vec(), layout(d)));
            for r in 0..k {
                let (a, b) = (prefix.levels[r].objective, full.levels[r].objective);
                assert!(b <= a + 1e-9 * (1.0 + a), "level {r}: {b} > {a}");
            }
        }
    }
}

#[test]
fn overlapped_mode_is_bit_identical() {
    let mut rng = rng(16);
    for _ in 0..20 {
        let d = rng.gen_range(6..=12);
        let levels: Vec<AffineTaskSet> = (0..4)
            .map(|_| random_level(&mut rng, d, 0..=4, 0..=3))
            .collect();
        let h = Hierarchy::new(levels, layout(d));
        let seq = solve(&h);
        let options = CascadeOptions {
            mode: ExecutionMode::Overlapped,
            ..Default::default()
        };
        let ovl = solve_hierarchy(&h, &options).unwrap();
        assert_eq!(seq.y_star, ovl.y_star);
        for (a, b) in seq.levels.iter().zip(&ovl.levels) {
            assert_eq!(a.v, b.v);
            assert_eq!(a.w, b.w);
        }
    }
}

#[test]
fn weights_scale_residuals() {
    let d = 6;
    let mut row = DMatrix::zeros(1, d);
    row[(0, 0)] = 1.0;
    let mut l = level(DMatrix::zeros(0, d), DVector::zeros(0), row.clone(), DVector::from_element(1, -1.0));
    l.append(AffineTaskSet::equality("other", row, DVector::zeros(1), 1.0).scaled(3.0));
    let sol = solve(&Hierarchy::new(vec![l], layout(d)));
    // min (y − 1)² + 9 y²  →  y = 0.1
    assert!((sol.y_star[0] - 0.1).abs() < 1e-9);
}

#[test]
fn malformed_hierarchies_are_rejected() {
    let d = 7;
    assert_eq!(
        solve_hierarchy(&Hierarchy::new(vec![], layout(d)), &CascadeOptions::default()).unwrap_err(),
        CascadeError::Empty
    );
    let wrong = AffineTaskSet::empty(d + 1);
    assert!(matches!(
        solve_hierarchy(&Hierarchy::new(vec![wrong], layout(d)), &CascadeOptions::default()),
        Err(CascadeError::Layout(_))
    ));
    let mut b = DMatrix::zeros(1, d);
    b[(0, 2)] = f64::NAN;
    let bad = level(DMatrix::zeros(0, d), DVector::zeros(0), b, DVector::zeros(1));
    assert_eq!(
        solve_hierarchy(&Hierarchy::new(vec![AffineTaskSet::empty(d), bad], layout(d)), &CascadeOptions::default())
            .unwrap_err(),
        CascadeError::NotFinite(2)
    );
}

fn standing(gravity: &Vector3<f64>) -> (RobotModel, RobotState, hid_core::model::ContactSet, Dynamics) {
    let (model, contacts) = biped_with_feet();
    let mut state = RobotState::zero(&model);
    state.base_position.z = 0.9;
    let dynamics = Dynamics::compute(&model, &state, &contacts, gravity);
    (model, state, contacts, dynamics)
}

/// Support constraints, then momentum, posture and force regularization.
fn support_hierarchy(
    model: &RobotModel,
    state: &RobotState,
    contacts: &hid_core::model::ContactSet,
    dynamics: &Dynamics,
    mode: Formulation,
) -> Hierarchy {
    let layout = VariableLayout::new(model.dof(), 2, mode);
    let n = model.dof();
    let mut l1 = build_dynamics_constraint(dynamics, &layout).unwrap();
    l1.append(build_contact_rows(dynamics, contacts, &layout, DEFAULT_COP_MARGIN).unwrap());
    l1.append(build_limit_rows(model, state, dynamics, &layout, 0.001).unwrap());
    let l2 = build_momentum_task(
        dynamics,
        &Vector6::zeros(),
        &layout,
        MomentumForm::Kinematic,
        MomentumRows::All,
        1.0,
    )
    .unwrap();
    let mut posture = DMatrix::zeros(n, n + 6);
    posture.columns_mut(0, n).fill_with_identity();
    let l3 = build_motion_task("posture", &posture, &DVector::zeros(n), &DVector::zeros(n), &layout, 1.0).unwrap();
    let targets = default_force_targets(2, dynamics.total_mass, &dynamics.gravity);
    let l4 = build_force_regularizer(dynamics, &layout, &targets, 1e-3).unwrap();
    let h = Hierarchy::new(vec![l1, l2, l3, l4], layout);
    match mode {
        Formulation::Reduced => h.with_torque_map(torque_map(dynamics)),
        Formulation::Full => h,
    }
}

#[test]
fn static_support_recovers_gravity_torques() {
    let (model, state, contacts, dynamics) = standing(&GRAVITY);
    let h = support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Reduced);
    let sol = solve(&h);
    assert!(sol.feasible());
    let n = model.dof();
    assert!(sol.qdd().amax() < 1e-8);
    let lambda = sol.lambda();
    // τ = N_u − J_{c,u}ᵀ λ with q̈ = 0.
    let expected = dynamics.nonlinear.rows(0, n) - dynamics.contact.matrix.columns(0, n).transpose() * &lambda;
    let tau = recover_torques(&sol, h.torque_map.as_ref().unwrap()).unwrap();
    assert!((&tau - expected).amax() < 1e-8);
    assert_eq!(sol.torques.as_ref().unwrap(), &tau);
    // Vertical forces carry the weight.
    let fz = lambda[2] + lambda[8];
    assert!((fz - dynamics.total_mass * GRAVITY.norm()).abs() < 1e-6);
}

#[test]
fn zero_gravity_rest_needs_no_torque() {
    let (model, state, contacts, dynamics) = standing(&Vector3::zeros());
    let h = support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Reduced);
    let sol = solve(&h);
    let tau = recover_torques(&sol, h.torque_map.as_ref().unwrap()).unwrap();
    assert!(tau.amax() < 1e-9, "{}", tau.amax());
}

#[test]
fn full_and_reduced_formulations_agree() {
    let mut rng = rng(17);
    let (model, contacts) = biped_with_feet();
    for _ in 0..5 {
        let mut state = RobotState::zero(&model);
        state.base_position.z = 0.9;
        state.joints = random_vector(model.dof(), &mut rng, 0.2);
        state.velocity = random_vector(model.dof() + 6, &mut rng, 0.2);
        let dynamics = Dynamics::compute(&model, &state, &contacts, &GRAVITY);
        let reduced = solve(&support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Reduced));
        let full = solve(&support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Full));
        let k = reduced.layout.motion_force_dim();
        let (tr, tf) = (reduced.torques.unwrap(), full.torques.unwrap());
        assert!((&tr - &tf).amax() < 1e-6, "torques differ by {}", (&tr - &tf).amax());
        assert!((reduced.y_star.rows(0, k) - full.y_star.rows(0, k)).amax() < 1e-6);
    }
}

#[test]
fn recover_torques_rejects_wrong_layout() {
    let (model, state, contacts, dynamics) = standing(&GRAVITY);
    let h = support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Full);
    let sol = solve(&h);
    assert!(matches!(recover_torques(&sol, &torque_map(&dynamics)), Err(CascadeError::Layout(_))));
}

#[test]
fn audit_of_feasible_support_is_clean() {
    let (model, state, contacts, dynamics) = standing(&GRAVITY);
    let h = support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Reduced);
    let sol = solve(&h);
    let ctx = PhysicalContext::new(&model, &state, &dynamics, &contacts, DEFAULT_COP_MARGIN, 0.001).unwrap();
    let report = audit_solution(&h, &sol, Some(&ctx), &AuditTolerances::default());
    assert!(report.is_clean(), "{:?}", report.flags);
    let physical = report.physical.unwrap();
    assert!(physical.normal_forces.iter().all(|f| *f > 0.0));
    assert!(physical.cop_excess.iter().all(|e| *e <= 1e-9));
    assert_eq!(report.levels.len(), 4);
}

#[test]
fn audit_flags_pulling_contact() {
    let (model, state, contacts, dynamics) = standing(&GRAVITY);
    let h = support_hierarchy(&model, &state, &contacts, &dynamics, Formulation::Reduced);
    let mut sol = solve(&h);
    let lambda = sol.layout.lambda().start;
    sol.y_star[lambda + 2] = -sol.y_star[lambda + 2];
    sol.torques = None;
    let ctx = PhysicalContext::new(&model, &state, &dynamics, &contacts, DEFAULT_COP_MARGIN, 0.001).unwrap();
    let report = audit_solution(&h, &sol, Some(&ctx), &AuditTolerances::default());
    assert!(report
        .flags
        .iter()
        .any(|f| matches!(f, AuditFlag::Unilaterality { contact, .. } if contact == "l_sole")));
    assert!(report.flags.iter().any(|f| matches!(f, AuditFlag::NewtonEuler { .. })));
    let json = serde_json::to_string(&report.flags).unwrap();
    assert!(json.contains("\"kind\":\"unilaterality\""));
}

#[test]
fn audit_without_levels_is_empty() {
    let d = 6;
    let h = Hierarchy::new(vec![], layout(d));
    let sol = CascadeSolution {
        y_star: DVector::zeros(d),
        levels: vec![],
        torques: None,
        layout: layout(d),
    };
    let report = audit_solution(&h, &sol, None, &AuditTolerances::default());
    assert!(report.is_clean());
    assert!(report.levels.is_empty());
}
