#![allow(dead_code)]

use nalgebra::{Point3, Vector3};
use rand::Rng;
use unicol::bench::random_primitive;
use unicol::geometry::Pose;
use unicol::kinematics::{Joint, LimitSpec, RobotModel, RobotState};
use unicol::primitives::{Attachment, Primitive, PrimitiveKind};
use unicol::trajopt::{
    Horizon, Objectives, Obstacle, OuterSettings, RobotEntry, Scene, StateTarget, Trajectory,
    Weights,
};

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_kind(rng: &mut impl Rng) -> PrimitiveKind {
    PrimitiveKind::ALL[rng.gen_range(0..4)]
}

/// A two-hinge arm, a free body and one obstacle, all within about a metre, with margins
/// large enough that many pairs are penalized.
pub fn random_two_robot_scene(rng: &mut impl Rng, steps: usize) -> Scene {
    let scaled = |rng: &mut _, kind| {
        let p = random_primitive(rng, kind);
        let vectors: Vec<Vector3<f64>> = p.vectors().iter().map(|v| v * 0.5).collect();
        Primitive::new(kind, p.anchor() * 0.5, vectors, p.margin() + 0.1).unwrap()
    };
    let joints = (0..2)
        .map(|j| Joint {
            parent: j,
            offset: Pose::new(
                Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.3),
                Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
            ),
            axis: random_unit(rng),
            limits: LimitSpec::default(),
        })
        .collect();
    let arm_prims = (0..3)
        .map(|l| {
            let kind = random_kind(rng);
            scaled(rng, kind).attached_to(Attachment::Link(l))
        })
        .collect();
    let arm = RobotModel::new("arm", joints, Default::default(), arm_prims).unwrap();
    let body_prims = (0..2)
        .map(|_| {
            let kind = random_kind(rng);
            scaled(rng, kind).attached_to(Attachment::Link(0))
        })
        .collect();
    let body = RobotModel::free_body("body", body_prims).unwrap();
    let kind = random_kind(rng);
    let obstacle = Obstacle {
        primitive: scaled(rng, kind),
        pose: Pose::new(
            Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..0.6),
            ),
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
        ),
    };
    let robots = vec![
        RobotEntry {
            model: arm,
            initial: RobotState::new(Pose::identity(), vec![0.3, -0.2]),
            fixed_base: false,
        },
        RobotEntry {
            model: body,
            initial: RobotState::new(Pose::from_translation(0.3, 0.2, 0.4), vec![]),
            fixed_base: false,
        },
    ];
    let objectives = Objectives {
        state_targets: vec![StateTarget {
            step: steps,
            robot: 1,
            value: vec![-0.3, 0.1, 0.5, 0.2, 0.0, 0.1],
            weight: 1.0,
        }],
        ee_targets: vec![],
    };
    Scene::new(
        robots,
        vec![obstacle],
        objectives,
        Horizon { steps, h: 0.1 },
        Weights::default(),
        OuterSettings {
            pin_weight: 10.0,
            ..Default::default()
        },
    )
    .unwrap()
}

/// The initial trajectory of `scene` with every coordinate jittered by up to `spread`.
pub fn jittered(rng: &mut impl Rng, scene: &Scene, spread: f64) -> Trajectory {
    let base = scene.initial_trajectory();
    let data = base
        .as_slice()
        .iter()
        .map(|x| x + rng.gen_range(-spread..spread))
        .collect();
    Trajectory::new(base.steps(), base.dim(), base.h(), data).unwrap()
}

pub fn with_data(traj: &Trajectory, data: Vec<f64>) -> Trajectory {
    Trajectory::new(traj.steps(), traj.dim(), traj.h(), data).unwrap()
}

/// Two free spheres of `radius` at the given centres, without targets.
pub fn sphere_pair_scene(radius: f64, a: [f64; 3], b: [f64; 3], steps: usize) -> Scene {
    let robot = |name: &str, at: [f64; 3]| RobotEntry {
        model: RobotModel::free_body(
            name,
            vec![Primitive::sphere(Point3::origin(), radius)
                .unwrap()
                .attached_to(Attachment::Link(0))],
        )
        .unwrap(),
        initial: RobotState::new(Pose::from_translation(at[0], at[1], at[2]), vec![]),
        fixed_base: false,
    };
    Scene::new(
        vec![robot("a", a), robot("b", b)],
        vec![],
        Objectives::default(),
        Horizon { steps, h: 0.1 },
        Weights::default(),
        OuterSettings::default(),
    )
    .unwrap()
}
