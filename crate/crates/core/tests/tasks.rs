mod common;

use common::*;
use hid_core::linalg::lstsq;
use hid_core::model::{Dynamics, RobotState, GRAVITY};
use hid_core::tasks::*;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::Rng;

fn setup(seed: u64) -> (hid_core::model::RobotModel, RobotState, hid_core::model::ContactSet, Dynamics) {
    let (model, contacts) = biped_with_feet();
    let mut rng = rng(seed);
    let state = random_state(&model, &mut rng);
    let dynamics = Dynamics::compute(&model, &state, &contacts, &GRAVITY);
    (model, state, contacts, dynamics)
}

fn reduced(c: usize) -> VariableLayout {
    VariableLayout::new(14, c, Formulation::Reduced)
}

fn full(c: usize) -> VariableLayout {
    VariableLayout::new(14, c, Formulation::Full)
}

fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

#[test]
fn layout_dimensions() {
    assert_eq!(reduced(2).dim(), 32);
    assert_eq!(full(2).dim(), 46);
    let humanoid = VariableLayout::new(25, 2, Formulation::Full);
    assert_eq!(humanoid.dim(), 68);
    assert_eq!(humanoid.with_mode(Formulation::Reduced).dim(), 43);
    assert_eq!(full(2).tau(), 32..46);
    assert!(reduced(2).tau().is_empty());
}

#[test]
fn dynamics_constraint_row_counts() {
    let (_, _, _, dynamics) = setup(1);
    let r = build_dynamics_constraint(&dynamics, &reduced(2)).unwrap();
    assert_eq!((r.eq_rows(), r.dim()), (6, 32));
    let f = build_dynamics_constraint(&dynamics, &full(2)).unwrap();
    assert_eq!((f.eq_rows(), f.dim()), (20, 46));
}

#[test]
fn static_support_satisfies_newton_euler_rows() {
    let (model, contacts) = biped_with_feet();
    let mut state = RobotState::zero(&model);
    state.base_position.z = 0.9;
    let dynamics = Dynamics::compute(&model, &state, &contacts, &GRAVITY);
    let n = model.dof();
    // Minimum-norm contact forces balancing N_l.
    let jl_t = dynamics.contact.matrix.columns(n, 6).transpose();
    let lambda = lstsq(&jl_t, &dynamics.nonlinear.rows(n, 6).into_owned(), 1e-12).unwrap();
    let y = stack(&[&DVector::zeros(n + 6), &lambda]);
    let rows = build_dynamics_constraint(&dynamics, &reduced(2)).unwrap();
    assert!(rows.evaluate(&y).0.amax() < 1e-9);
}

#[test]
fn reduced_rows_hold_exactly_when_full_rows_hold() {
    let mut rng = rng(2);
    for seed in 0..10 {
        let (_, _, _, dynamics) = setup(20 + seed);
        let map = torque_map(&dynamics);
        let qdd = random_vector(20, &mut rng, 3.0);
        let lambda0 = random_vector(12, &mut rng, 100.0);
        // Project λ so the Newton-Euler rows hold, then read τ off the map.
        let red = build_dynamics_constraint(&dynamics, &reduced(2)).unwrap();
        let ful = build_dynamics_constraint(&dynamics, &full(2)).unwrap();
        let b_lambda = red.eq_matrix.columns(20, 12).into_owned();
        let resid = red.evaluate(&stack(&[&qdd, &lambda0])).0;
        let fix = lstsq(&b_lambda, &resid, 1e-12).unwrap();
        let lambda = &lambda0 - fix;
        let y_red = stack(&[&qdd, &lambda]);
        let tau = map.apply(&y_red);
        let y_full = stack(&[&qdd, &lambda, &tau]);
        assert!(red.evaluate(&y_red).0.amax() < 1e-8);
        assert!(ful.evaluate(&y_full).0.amax() < 1e-8);

        // Breaking the Newton-Euler balance breaks both.
        let mut bad = lambda.clone();
        bad[2] += 10.0;
        let y_red = stack(&[&qdd, &bad]);
        let y_full = stack(&[&qdd, &bad, &map.apply(&y_red)]);
        assert!(red.evaluate(&y_red).0.amax() > 1.0);
        assert!(ful.evaluate(&y_full).0.amax() > 1.0);
    }
}

#[test]
fn torque_map_closes_equations_of_motion() {
    let mut rng = rng(3);
    let (_, _, _, dynamics) = setup(3);
    let map = torque_map(&dynamics);
    assert_eq!(map.apply(&DVector::zeros(32)), dynamics.nonlinear.rows(0, 14).into_owned());
    for _ in 0..20 {
        let qdd = random_vector(20, &mut rng, 3.0);
        let lambda = random_vector(12, &mut rng, 100.0);
        let tau = map.apply(&stack(&[&qdd, &lambda]));
        let lhs = &dynamics.mass_matrix * &qdd + &dynamics.nonlinear;
        let rhs = dynamics.contact.matrix.transpose() * &lambda;
        let residual = (lhs - rhs).rows(0, 14) - tau;
        assert!(residual.amax() <= 1e-9);
    }
}

#[test]
fn pendulum_torque_map_is_textbook_inverse_dynamics() {
    let (m, l) = (1.5, 0.8);
    let model = pendulum(m, l);
    let mut state = RobotState::zero(&model);
    state.joints[0] = 0.4;
    let dynamics = Dynamics::compute(&model, &state, &Default::default(), &GRAVITY);
    let map = torque_map(&dynamics);
    let mut qdd = DVector::zeros(7);
    qdd[0] = 2.0;
    let tau = map.apply(&qdd)[0];
    let expected = m * l * l * 2.0 + m * 9.81 * l * 0.4f64.sin();
    assert!((tau - expected).abs() < 1e-6);
}

#[test]
fn acceleration_bound_at_upper_limit() {
    let (model, _) = biped_with_feet();
    let mut state = RobotState::zero(&model);
    let j = model.joint_index("l_kfe").unwrap();
    state.joints[j] = model.joints()[j].limits.q_max;
    let (lo, hi) = acceleration_bounds(&model, &state, 1e-3);
    assert!(hi[j] <= 0.0);
    assert!(lo[j] < 0.0);
}

#[test]
fn infinite_torque_limits_emit_no_rows() {
    let model = random_tree(1);
    let state = RobotState::zero(&model);
    let dynamics = Dynamics::compute(&model, &state, &Default::default(), &GRAVITY);
    let layout = VariableLayout::new(model.dof(), 0, Formulation::Reduced);
    assert_eq!(build_torque_limit_rows(&model, &dynamics, &layout).unwrap().ineq_rows(), 0);
    let (biped, contacts) = biped_with_feet();
    let dyn2 = Dynamics::compute(&biped, &RobotState::zero(&biped), &contacts, &GRAVITY);
    assert_eq!(build_torque_limit_rows(&biped, &dyn2, &reduced(2)).unwrap().ineq_rows(), 28);
}

#[test]
fn acceleration_rows_hold_inside_the_box() {
    let (model, _) = biped_with_feet();
    let mut rng = rng(4);
    let mut state = RobotState::zero(&model);
    for (i, joint) in model.joints().iter().enumerate() {
        state.joints[i] = 0.5 * (joint.limits.q_min + joint.limits.q_max);
    }
    let rows = build_acceleration_limit_rows(&model, &state, &reduced(2), 1e-3).unwrap();
    assert_eq!(rows.ineq_rows(), 28);
    let (lo, hi) = acceleration_bounds(&model, &state, 1e-3);
    for _ in 0..100 {
        let mut y = DVector::zeros(32);
        for i in 0..14 {
            y[i] = rng.gen_range(lo[i]..=hi[i]);
        }
        assert!(rows.evaluate(&y).1.max() <= 0.0);
    }
}

fn flat_feet() -> (hid_core::model::RobotModel, hid_core::model::ContactSet, Dynamics) {
    let (model, contacts) = biped_with_feet();
    let mut state = RobotState::zero(&model);
    state.base_position.z = 0.9;
    let dynamics = Dynamics::compute(&model, &state, &contacts, &GRAVITY);
    (model, contacts, dynamics)
}

#[test]
fn vertical_force_at_centre_is_strictly_inside() {
    let (_, contacts, dynamics) = flat_feet();
    let rows = build_contact_rows(&dynamics, &contacts, &reduced(2), DEFAULT_COP_MARGIN).unwrap();
    assert_eq!((rows.eq_rows(), rows.ineq_rows()), (12, 16));
    let mut y = DVector::zeros(32);
    y[22] = 250.0;
    y[28] = 250.0;
    assert!(rows.evaluate(&y).1.max() < 0.0);
}

#[test]
fn cop_on_shrunk_edge_is_tight() {
    let (_, contacts, dynamics) = flat_feet();
    let rows = build_cop_rows(&dynamics, &contacts, &reduced(2), 0.01).unwrap();
    let front = contacts.contacts[0].x_forward - 0.01;
    let fz = 300.0;
    // Local wrench with CoP at x = front: n_y = −x f_z. Soles are aligned with the world.
    let mut y = DVector::zeros(32);
    y[20 + 2] = fz;
    y[20 + 4] = -front * fz;
    y[26 + 2] = fz;
    let ineq = rows.evaluate(&y).1;
    assert!(ineq[0].abs() < 1e-9);
    assert!(ineq.max() < 1e-9);
}

#[test]
fn cop_rows_agree_with_geometric_oracle() {
    let (model, contacts) = biped_with_feet();
    let mut rng = rng(5);
    let margin = DEFAULT_COP_MARGIN;
    for _ in 0..500 {
        let state = random_state(&model, &mut rng);
        let dynamics = Dynamics::compute(&model, &state, &contacts, &GRAVITY);
        let rows = build_cop_rows(&dynamics, &contacts, &reduced(2), margin).unwrap();
        let mut y = DVector::zeros(32);
        let mut inside = [false; 2];
        for k in 0..2 {
            let local = Vector6::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(1.0..400.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-5.0..5.0),
            );
            // CoP: point where the tangential moment vanishes.
            let (px, py) = (-local[4] / local[2], local[3] / local[2]);
            let c = &contacts.contacts[k];
            inside[k] = px <= c.x_forward - margin
                && px >= -(c.x_backward - margin)
                && py <= c.y_left - margin
                && py >= -(c.y_right - margin);
            let r = dynamics.contact_poses[k].0;
            let f = r * local.fixed_rows::<3>(0);
            let n = r * local.fixed_rows::<3>(3);
            y.rows_mut(20 + 6 * k, 3).copy_from(&f);
            y.rows_mut(23 + 6 * k, 3).copy_from(&n);
        }
        let ineq = rows.evaluate(&y).1;
        for k in 0..2 {
            let ok = ineq.rows(4 * k, 4).max() <= 1e-12;
            assert_eq!(ok, inside[k]);
        }
    }
}

#[test]
fn zero_area_polygon_is_rejected() {
    let (_, mut contacts, dynamics) = flat_feet();
    contacts.contacts[1].y_left = 0.004;
    contacts.contacts[1].y_right = 0.004;
    let err = build_cop_rows(&dynamics, &contacts, &reduced(2), 0.01).unwrap_err();
    assert!(matches!(err, TaskError::Configuration(_)));
}

#[test]
fn friction_rows_match_pyramid() {
    let (_, contacts, dynamics) = flat_feet();
    let rows = build_friction_rows(&dynamics, &contacts, &reduced(2)).unwrap();
    let mu = contacts.contacts[0].friction / 2f64.sqrt();
    let mut y = DVector::zeros(32);
    y[22] = 100.0;
    y[28] = 100.0;
    y[20] = mu * 100.0 * 0.999;
    assert!(rows.evaluate(&y).1.max() < 0.0);
    y[20] = mu * 100.0 * 1.001;
    assert!(rows.evaluate(&y).1[0] > 0.0);
}

#[test]
fn motion_task_is_satisfied_by_zero_acceleration_when_reference_is_drift() {
    let mut rng = rng(6);
    let j = random_matrix(6, 20, &mut rng, 1.0);
    let drift = random_vector(6, &mut rng, 1.0);
    let rows = build_motion_task("swing", &j, &drift, &drift, &reduced(2), 1.0).unwrap();
    assert_eq!(rows.eq_rows(), 6);
    assert!(rows.evaluate(&DVector::zeros(32)).0.amax() == 0.0);
}

#[test]
fn posture_task_from_identity() {
    let mut j = DMatrix::zeros(20, 20);
    j.fill_with_identity();
    let target = DVector::from_fn(20, |i, _| i as f64);
    let rows = build_motion_task("posture", &j, &DVector::zeros(20), &target, &reduced(2), 0.1).unwrap();
    let mut y = DVector::zeros(32);
    y.rows_mut(0, 20).copy_from(&target);
    assert!(rows.evaluate(&y).0.amax() == 0.0);
    assert!(rows.eq_weights.iter().all(|w| *w == 0.1));
}

#[test]
fn force_form_momentum_in_free_fall() {
    let (model, contacts, dynamics) = flat_feet();
    let m = model.total_mass();
    let href = Vector6::new(0.0, 0.0, -9.81 * m, 0.0, 0.0, 0.0);
    let rows = build_momentum_task(&dynamics, &href, &reduced(2), MomentumForm::Force, MomentumRows::All, 1.0).unwrap();
    assert!(rows.evaluate(&DVector::zeros(32)).0.amax() < 1e-10);
    let _ = contacts;
}

#[test]
fn momentum_forms_agree_on_consistent_points() {
    let mut rng = rng(7);
    for seed in 0..10 {
        let (_, _, _, dynamics) = setup(70 + seed);
        let layout = reduced(2);
        let href = Vector6::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let kin = build_momentum_task(&dynamics, &href, &layout, MomentumForm::Kinematic, MomentumRows::All, 1.0).unwrap();
        let force = build_momentum_task(&dynamics, &href, &layout, MomentumForm::Force, MomentumRows::All, 1.0).unwrap();
        let ne = build_dynamics_constraint(&dynamics, &layout).unwrap();
        // Pick λ, then solve the Newton-Euler rows for the base acceleration.
        let mut y = random_vector(32, &mut rng, 2.0);
        y.rows_mut(20, 12).scale_mut(50.0);
        let base_cols = ne.eq_matrix.columns(14, 6).into_owned();
        let resid = ne.evaluate(&y).0;
        let fix = base_cols.lu().solve(&resid).unwrap();
        let mut base = y.rows(14, 6).into_owned();
        base -= fix;
        y.rows_mut(14, 6).copy_from(&base);
        assert!(ne.evaluate(&y).0.amax() < 1e-8);
        let diff = kin.evaluate(&y).0 - force.evaluate(&y).0;
        assert!(diff.amax() <= 1e-8, "{}", diff.amax());
    }
}

#[test]
fn static_support_below_com() {
    // Base-only body with a contact frame directly below its CoM.
    let model = hid_core::model::RobotModel::from_description(&hid_core::model::ModelDescription {
        name: "block".into(),
        base: hid_core::model::BodyDescription::new("block", 10.0, [0.0; 3], [0.1, 0.1, 0.1, 0.0, 0.0, 0.0]),
        links: vec![],
        frames: vec![hid_core::model::FrameDescription {
            name: "sole".into(),
            link: "block".into(),
            xyz: [0.0, 0.0, -0.5],
            rpy: [0.0; 3],
        }],
    })
    .unwrap();
    let contacts = hid_core::model::ContactSet::new(vec![
        hid_core::model::Contact::centered(&model, "sole", 0.2, 0.1, 0.7).unwrap(),
    ]);
    let dynamics = Dynamics::compute(&model, &RobotState::zero(&model), &contacts, &GRAVITY);
    let layout = VariableLayout::new(0, 1, Formulation::Reduced);
    let rows = build_momentum_task(&dynamics, &Vector6::zeros(), &layout, MomentumForm::Force, MomentumRows::All, 1.0).unwrap();
    let mut y = DVector::zeros(12);
    y[8] = 10.0 * 9.81;
    assert!(rows.evaluate(&y).0.amax() < 1e-12);
    let linear = build_momentum_task(&dynamics, &Vector6::zeros(), &layout, MomentumForm::Force, MomentumRows::Linear, 1.0).unwrap();
    assert_eq!(linear.eq_rows(), 3);
}

#[test]
fn contact_momentum_map_moment_arm() {
    let d = contact_momentum_map(&Vector3::new(1.0, 0.0, 0.0), &Vector3::zeros());
    let w = nalgebra::Vector6::new(0.0, 0.0, 10.0, 0.0, 0.0, 0.0);
    let h = d * w;
    // Force +z at x = +1 about the origin: moment (1,0,0) × (0,0,10) = (0,−10,0).
    assert!((h.fixed_rows::<3>(3) - Vector3::new(0.0, -10.0, 0.0)).norm() < 1e-12);
    let _ = Matrix3::<f64>::identity();
}

#[test]
fn regularizer_symmetric_targets() {
    let (model, _, dynamics) = flat_feet();
    let targets = default_force_targets(2, model.total_mass(), &GRAVITY);
    let rows = build_force_regularizer(&dynamics, &reduced(2), &targets, 1.0).unwrap();
    assert_eq!(rows.eq_rows(), 12);
    let mut y = DVector::zeros(32);
    let half = model.total_mass() * 9.81 / 2.0;
    y[22] = half;
    y[28] = half;
    assert!(rows.evaluate(&y).0.amax() < 1e-9);

    // Swing foot driven to a zero wrench.
    let targets = vec![targets[0], Vector6::zeros()];
    let rows = build_force_regularizer(&dynamics, &reduced(2), &targets, 1.0).unwrap();
    let mut y = DVector::zeros(32);
    y[22] = half;
    assert!(rows.evaluate(&y).0.amax() < 1e-9);
}

#[test]
fn reduction_preserves_row_values() {
    let mut rng = rng(8);
    for seed in 0..5 {
        let (model, state, contacts, dynamics) = setup(80 + seed);
        let layout = full(2);
        let map = torque_map(&dynamics);
        let mut set = build_dynamics_constraint(&dynamics, &layout).unwrap();
        set.append(build_limit_rows(&model, &state, &dynamics, &layout, 1e-3).unwrap());
        set.append(build_contact_rows(&dynamics, &contacts, &layout, 0.01).unwrap());
        let red = set.reduce(&layout, &map).unwrap();
        assert_eq!(red.dim(), 32);
        for _ in 0..10 {
            let ql = random_vector(32, &mut rng, 5.0);
            let tau = map.apply(&ql);
            let y = stack(&[&ql, &tau]);
            let (fe, fi) = set.evaluate(&y);
            let (re, ri) = red.evaluate(&ql);
            assert!((fe - re).amax() <= 1e-10 * (1.0 + ql.amax() * 100.0));
            assert!((fi - ri).amax() <= 1e-10 * (1.0 + ql.amax() * 100.0));
        }
    }
}
