//! Ready-made desk-scale scenes.

use nalgebra::{Point3, Vector3};

use crate::error::Result;
use crate::geometry::Pose;
use crate::kinematics::{Joint, LimitSpec, RobotModel, RobotState};
use crate::primitives::{Attachment, Primitive};
use crate::trajopt::{
    EeTarget, Horizon, Objectives, Obstacle, OuterSettings, RobotEntry, Scene, StateTarget, Weights,
};

fn free_robot(name: &str, primitives: Vec<Primitive>, start: [f64; 3]) -> Result<RobotEntry> {
    let primitives = primitives
        .into_iter()
        .map(|p| p.attached_to(Attachment::Link(0)))
        .collect();
    Ok(RobotEntry {
        model: RobotModel::free_body(name, primitives)?,
        initial: RobotState::new(Pose::from_translation(start[0], start[1], start[2]), vec![]),
        fixed_base: false,
    })
}

fn pose_target(step: usize, robot: usize, at: [f64; 3]) -> StateTarget {
    StateTarget {
        step,
        robot,
        value: vec![at[0], at[1], at[2], 0.0, 0.0, 0.0],
        weight: 1.0,
    }
}

/// Two bodies trading places along the x axis on parallel paths `2 * offset` apart.
fn swap(steps: usize, offset: f64, make: impl Fn() -> Result<Vec<Primitive>>) -> Result<Scene> {
    let robots = vec![
        free_robot("a", make()?, [-1.0, offset, 0.0])?,
        free_robot("b", make()?, [1.0, -offset, 0.0])?,
    ];
    let objectives = Objectives {
        state_targets: vec![
            pose_target(steps, 0, [1.0, offset, 0.0]),
            pose_target(steps, 1, [-1.0, -offset, 0.0]),
        ],
        ee_targets: vec![],
    };
    Scene::new(
        robots,
        vec![],
        objectives,
        Horizon { steps, h: 0.1 },
        Weights::default(),
        OuterSettings::default(),
    )
}

/// Two spheres of radius 0.25 m swapping positions 2 m apart. The paths are 4 cm apart,
/// just enough to leave the head-on saddle point.
pub fn sphere_swap(steps: usize) -> Result<Scene> {
    swap(steps, 0.02, || {
        Ok(vec![Primitive::sphere(Point3::origin(), 0.25)?])
    })
}

/// Two 0.3 m cubes with a 5 cm margin swapping positions 2 m apart. The straight paths
/// keep the cubes 2 cm apart, so the margins overlap by 8 cm but the cores never
/// intersect (inside an intersection the distance is flat and gives no direction).
pub fn box_swap(steps: usize) -> Result<Scene> {
    swap(steps, 0.16, || {
        Ok(vec![Primitive::cuboid(
            Point3::new(-0.15, -0.15, -0.15),
            Vector3::new(0.3, 0.0, 0.0),
            Vector3::new(0.0, 0.3, 0.0),
            Vector3::new(0.0, 0.0, 0.3),
            0.05,
        )?])
    })
}

/// Link lengths of the seven-hinge arm, base to tool.
pub const ARM_LINKS: [f64; 7] = [0.15, 0.25, 0.25, 0.2, 0.2, 0.1, 0.1];

/// A seven-hinge arm with alternating vertical and horizontal axes on a fixed base. Each
/// link carries a capsule along its length.
pub fn seven_hinge_arm() -> Result<RobotModel> {
    let mut joints = Vec::new();
    let mut primitives = Vec::new();
    let mut mount = 0.1;
    for (j, &len) in ARM_LINKS.iter().enumerate() {
        let axis = if j % 2 == 0 {
            Vector3::z()
        } else {
            Vector3::y()
        };
        joints.push(Joint {
            parent: j,
            offset: Pose::from_translation(0.0, 0.0, mount),
            axis,
            limits: LimitSpec {
                lower: Some(-2.9),
                upper: Some(2.9),
                velocity: Some(1.5),
                acceleration: None,
            },
        });
        primitives.push(
            Primitive::capsule(Point3::origin(), Vector3::new(0.0, 0.0, len), 0.04)?
                .attached_to(Attachment::Link(j + 1)),
        );
        mount = len;
    }
    primitives.push(
        Primitive::sphere(Point3::new(0.0, 0.0, 0.05), 0.08)?.attached_to(Attachment::Link(0)),
    );
    RobotModel::new("arm", joints, Default::default(), primitives)
}

/// The arm moves its tool from one side of a box to the other over `steps` steps.
pub fn arm_around_box(steps: usize) -> Result<Scene> {
    let model = seven_hinge_arm()?;
    let start = vec![0.6, 0.9, 0.0, 0.9, 0.0, 0.6, 0.0];
    let robots = vec![RobotEntry {
        model,
        initial: RobotState::new(Pose::identity(), start),
        fixed_base: true,
    }];
    let obstacle = Obstacle {
        primitive: Primitive::cuboid(
            Point3::new(-0.1, -0.1, 0.0),
            Vector3::new(0.2, 0.0, 0.0),
            Vector3::new(0.0, 0.2, 0.0),
            Vector3::new(0.0, 0.0, 0.35),
            0.01,
        )?,
        pose: Pose::from_translation(0.55, 0.0, 0.0),
    };
    let objectives = Objectives {
        state_targets: vec![],
        ee_targets: vec![EeTarget {
            step: steps,
            robot: 0,
            link: 7,
            local: [0.0, 0.0, 0.1],
            target: [0.45, -0.35, 0.25],
            weight: 10.0,
        }],
    };
    Scene::new(
        robots,
        vec![obstacle],
        objectives,
        Horizon { steps, h: 0.1 },
        Weights::default(),
        OuterSettings::default(),
    )
}
