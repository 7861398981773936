#![allow(dead_code)]

pub mod hierarchy;
pub mod oracle;
pub mod qp;

use hid_core::model::{
    BodyDescription, Contact, ContactSet, FrameDescription, JointDescription, JointType, LimitsDescription,
    LinkDescription, ModelDescription, OriginDescription, RobotModel, RobotState,
};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_inertia(rng: &mut ChaCha8Rng) -> [f64; 6] {
    // Diagonal-dominant symmetric tensor.
    let d = [rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2)];
    let off = [rng.gen_range(-0.005..0.005), rng.gen_range(-0.005..0.005), rng.gen_range(-0.005..0.005)];
    [d[0], d[1], d[2], off[0], off[1], off[2]]
}

fn v3(rng: &mut ChaCha8Rng, s: f64) -> [f64; 3] {
    [rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s)]
}

/// Branching tree with mixed revolute/prismatic joints and skewed axes.
pub fn random_tree(seed: u64) -> RobotModel {
    let mut rng = rng(seed);
    let mut links = Vec::new();
    let mut names = vec!["base".to_string()];
    for i in 0..7 {
        let parent = names[rng.gen_range(0..names.len())].clone();
        let name = format!("l{i}");
        let kind = if i % 4 == 3 { JointType::Prismatic } else { JointType::Revolute };
        links.push(LinkDescription {
            name: name.clone(),
            parent,
            mass: rng.gen_range(0.5..3.0),
            com: v3(&mut rng, 0.2),
            inertia: random_inertia(&mut rng),
            joint: JointDescription {
                name: format!("j{i}"),
                kind,
                axis: v3(&mut rng, 1.0),
                origin: OriginDescription { xyz: v3(&mut rng, 0.4), rpy: v3(&mut rng, 1.0) },
                limits: LimitsDescription::default(),
            },
        });
        names.push(name);
    }
    let frames = vec![
        FrameDescription { name: "tip_a".into(), link: "l6".into(), xyz: [0.1, 0.0, -0.2], rpy: [0.2, 0.0, 0.3] },
        FrameDescription { name: "tip_b".into(), link: "l4".into(), xyz: [0.0, 0.1, -0.1], rpy: [0.0, -0.4, 0.0] },
        FrameDescription { name: "on_base".into(), link: "base".into(), xyz: [0.3, -0.1, 0.2], rpy: [0.1, 0.2, 0.3] },
    ];
    RobotModel::from_description(&ModelDescription {
        name: format!("random{seed}"),
        base: BodyDescription::new("base", 4.0, [0.05, -0.02, 0.1], [0.3, 0.25, 0.2, 0.01, 0.0, -0.01]),
        links,
        frames,
    })
    .unwrap()
}

pub fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> RobotState {
    let n = model.dof();
    let mut state = RobotState::zero(model);
    state.joints = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
    state.base_position = Vector3::from(v3(rng, 1.0));
    state.base_orientation = UnitQuaternion::from_scaled_axis(Vector3::from(v3(rng, 1.5)));
    state.velocity = DVector::from_fn(n + 6, |_, _| rng.gen_range(-1.0..1.0));
    state
}

pub fn random_vector(len: usize, rng: &mut ChaCha8Rng, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Two-link planar chain of unit point masses at unit distances, pitching about y.
pub fn planar_two_link(eps_inertia: f64) -> RobotModel {
    let tiny = [eps_inertia, eps_inertia, eps_inertia, 0.0, 0.0, 0.0];
    RobotModel::from_description(&ModelDescription {
        name: "two_link".into(),
        base: BodyDescription::new("base", 1.0, [0.0; 3], [0.1, 0.1, 0.1, 0.0, 0.0, 0.0]),
        links: vec![
            LinkDescription::revolute("a", "base", [0.0, 1.0, 0.0], [0.0; 3], 1.0, [1.0, 0.0, 0.0], tiny),
            LinkDescription::revolute("b", "a", [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], 1.0, [1.0, 0.0, 0.0], tiny),
        ],
        frames: vec![],
    })
    .unwrap()
}

/// One pendulum of mass `m` at distance `l` below a revolute joint about y.
pub fn pendulum(m: f64, l: f64) -> RobotModel {
    RobotModel::from_description(&ModelDescription {
        name: "pendulum".into(),
        base: BodyDescription::new("base", 1.0, [0.0; 3], [0.1, 0.1, 0.1, 0.0, 0.0, 0.0]),
        links: vec![LinkDescription::revolute(
            "bob", "base", [0.0, 1.0, 0.0], [0.0; 3], m, [0.0, 0.0, -l], [1e-9, 1e-9, 1e-9, 0.0, 0.0, 0.0],
        )],
        frames: vec![FrameDescription { name: "tip".into(), link: "bob".into(), xyz: [0.0, 0.0, -l], rpy: [0.0; 3] }],
    })
    .unwrap()
}

/// Central finite difference of `f` along the state's own velocity.
pub fn along_velocity<F>(state: &RobotState, h: f64, f: F) -> DMatrix<f64>
where
    F: Fn(&RobotState) -> DMatrix<f64>,
{
    (f(&state.advanced(h)) - f(&state.advanced(-h))) / (2.0 * h)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Bundled biped with both soles as contacts.
pub fn biped_with_feet() -> (RobotModel, ContactSet) {
    let model = hid_core::model::builtin::biped14();
    let contacts = ContactSet::new(vec![
        Contact::centered(&model, "l_sole", 0.22, 0.1, 0.8).unwrap(),
        Contact::centered(&model, "r_sole", 0.22, 0.1, 0.8).unwrap(),
    ]);
    (model, contacts)
}
