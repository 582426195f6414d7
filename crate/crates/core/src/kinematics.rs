//! Floating-base kinematic trees with hinge joints.
//!
//! A robot's state packs the base translation, the base Euler angles and one angle per
//! hinge: `(x, y, z, a, b, c, q_1, ..., q_n)`. Link 0 is the base; joint `j` creates link
//! `j + 1` hanging off an earlier link.

use nalgebra::{Matrix3xX, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle, Frame, Pose};
use crate::primitives::{Attachment, Primitive};
use crate::sensitivity::MovingPrimitive;

/// Number of base coordinates at the front of every robot state.
pub const BASE_DOF: usize = 6;

/// Optional bounds on a coordinate, its finite-difference velocity and acceleration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<f64>,
}

impl LimitSpec {
    pub fn is_empty(&self) -> bool {
        self.lower.is_none()
            && self.upper.is_none()
            && self.velocity.is_none()
            && self.acceleration.is_none()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if let (Some(l), Some(u)) = (self.lower, self.upper) {
            if l > u {
                return Err(Error::Semantic(format!(
                    "{what}: lower limit {l} exceeds upper limit {u}"
                )));
            }
        }
        for (name, v) in [
            ("velocity", self.velocity),
            ("acceleration", self.acceleration),
        ] {
            if let Some(v) = v {
                if v < 0.0 {
                    return Err(Error::Semantic(format!(
                        "{what}: {name} bound must be non-negative"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub parent: usize,
    pub offset: Pose,
    pub axis: Vector3<f64>,
    pub limits: LimitSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<Joint>,
    base_limits: [LimitSpec; BASE_DOF],
    primitives: Vec<Primitive>,
    /// Joint indices on the path from the base to each link, root first.
    ancestors: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub base: Pose,
    pub joint_angles: Vec<f64>,
}

impl RobotState {
    pub fn new(base: Pose, joint_angles: Vec<f64>) -> Self {
        Self { base, joint_angles }
    }

    pub fn dim(&self) -> usize {
        BASE_DOF + self.joint_angles.len()
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            base: Pose::from_coords(&x[..BASE_DOF]),
            joint_angles: x[BASE_DOF..].to_vec(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.base.coords().to_vec();
        v.extend_from_slice(&self.joint_angles);
        v
    }
}

/// Which finite-difference quantity a [`LimitValue`] bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitOrder {
    Position,
    Velocity,
    Acceleration,
}

impl LimitOrder {
    /// Coefficients on steps `step, step-1, step-2` producing this quantity.
    pub fn stencil(self) -> &'static [f64] {
        match self {
            LimitOrder::Position => &[1.0],
            LimitOrder::Velocity => &[1.0, -1.0],
            LimitOrder::Acceleration => &[1.0, -2.0, 1.0],
        }
    }

    /// Scale applied to the stencil: `1`, `1/h` or `1/h²`.
    pub fn scale(self, h: f64) -> f64 {
        match self {
            LimitOrder::Position => 1.0,
            LimitOrder::Velocity => 1.0 / h,
            LimitOrder::Acceleration => 1.0 / (h * h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitValue {
    /// Coordinate index within the robot state.
    pub coord: usize,
    pub order: LimitOrder,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// World frames of every link at one state, plus the joint origins and axes needed for
/// Jacobians.
#[derive(Clone, Debug)]
pub struct LinkFrames {
    pub base: Pose,
    pub frames: Vec<Frame>,
    joint_origins: Vec<Vector3<f64>>,
    joint_axes: Vec<Vector3<f64>>,
    base_rotation_derivatives: [nalgebra::Matrix3<f64>; 3],
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        base_limits: [LimitSpec; BASE_DOF],
        primitives: Vec<Primitive>,
    ) -> Result<Self> {
        let name = name.into();
        let mut ancestors: Vec<Vec<usize>> = vec![Vec::new()];
        for (j, joint) in joints.iter().enumerate() {
            if joint.parent > j {
                return Err(Error::Semantic(format!(
                    "robot {name}: joint {j} has parent link {} which is not defined before it",
                    joint.parent
                )));
            }
            if !((joint.axis.norm() - 1.0).abs() <= 1e-12) {
                return Err(Error::Semantic(format!(
                    "robot {name}: joint {j} axis must be a unit vector"
                )));
            }
            joint.limits.validate(&format!("robot {name}: joint {j}"))?;
            let mut chain = ancestors[joint.parent].clone();
            chain.push(j);
            ancestors.push(chain);
        }
        for (k, l) in base_limits.iter().enumerate() {
            l.validate(&format!("robot {name}: base coordinate {k}"))?;
        }
        for (i, p) in primitives.iter().enumerate() {
            match p.attachment() {
                Attachment::Link(l) if l <= joints.len() => {}
                other => {
                    return Err(Error::Semantic(format!(
                        "robot {name}: primitive {i} has invalid attachment {other:?}"
                    )))
                }
            }
        }
        Ok(Self {
            name,
            joints,
            base_limits,
            primitives,
            ancestors,
        })
    }

    /// A rigid body without joints.
    pub fn free_body(name: impl Into<String>, primitives: Vec<Primitive>) -> Result<Self> {
        Self::new(name, Vec::new(), Default::default(), primitives)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn link_count(&self) -> usize {
        self.joints.len() + 1
    }

    /// State dimension `n + 6`.
    pub fn dim(&self) -> usize {
        BASE_DOF + self.joints.len()
    }

    pub fn base_limits(&self) -> &[LimitSpec; BASE_DOF] {
        &self.base_limits
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn parent(&self, link: usize) -> Option<usize> {
        if link == 0 {
            None
        } else {
            self.joints.get(link - 1).map(|j| j.parent)
        }
    }

    /// True when one link is the other's parent.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.parent(a) == Some(b) || self.parent(b) == Some(a)
    }

    /// Limits for coordinate `coord` of the packed state.
    pub fn coordinate_limits(&self, coord: usize) -> &LimitSpec {
        if coord < BASE_DOF {
            &self.base_limits[coord]
        } else {
            &self.joints[coord - BASE_DOF].limits
        }
    }

    fn check_state(&self, state: &RobotState) -> Result<()> {
        if state.joint_angles.len() != self.joints.len() {
            return Err(Error::DimensionMismatch {
                expected: self.joints.len(),
                found: state.joint_angles.len(),
            });
        }
        Ok(())
    }

    pub fn link_frames(&self, state: &RobotState) -> Result<LinkFrames> {
        self.check_state(state)?;
        let base_frame = Frame::from_pose(&state.base);
        let mut frames = Vec::with_capacity(self.link_count());
        frames.push(base_frame);
        let mut joint_origins = Vec::with_capacity(self.joints.len());
        let mut joint_axes = Vec::with_capacity(self.joints.len());
        for (joint, &q) in self.joints.iter().zip(&state.joint_angles) {
            let mount = frames[joint.parent].compose(&Frame::from_pose(&joint.offset));
            joint_origins.push(mount.translation);
            joint_axes.push(mount.rotation * joint.axis);
            frames.push(mount.compose(&Frame {
                rotation: axis_angle(&joint.axis, q),
                translation: Vector3::zeros(),
            }));
        }
        Ok(LinkFrames {
            base: state.base,
            frames,
            joint_origins,
            joint_axes,
            base_rotation_derivatives: state.base.rotation_derivatives(),
        })
    }

    /// World position of a point given in the local frame of `link`.
    pub fn forward_kinematics(
        &self,
        state: &RobotState,
        link: usize,
        local: &Point3<f64>,
    ) -> Result<Point3<f64>> {
        if link >= self.link_count() {
            return Err(Error::UnknownLink(link));
        }
        Ok(self.link_frames(state)?.frames[link].transform_point(local))
    }

    /// `∂K/∂x`, 3 × (n + 6).
    pub fn fk_jacobian(
        &self,
        state: &RobotState,
        link: usize,
        local: &Point3<f64>,
    ) -> Result<Matrix3xX<f64>> {
        if link >= self.link_count() {
            return Err(Error::UnknownLink(link));
        }
        let frames = self.link_frames(state)?;
        Ok(self.point_jacobian(&frames, link, local, self.dim(), 0))
    }

    /// Jacobian of a link-local point written into `n_x` columns starting at `offset`.
    pub fn point_jacobian(
        &self,
        frames: &LinkFrames,
        link: usize,
        local: &Point3<f64>,
        n_x: usize,
        offset: usize,
    ) -> Matrix3xX<f64> {
        let world = frames.frames[link].transform_point(local);
        let mut jac = Matrix3xX::zeros(n_x);
        for k in 0..3 {
            jac[(k, offset + k)] = 1.0;
        }
        let base_t = frames.base.translation_vector();
        let rel = frames.frames[0].rotation.transpose() * (world.coords - base_t);
        for (k, d) in frames.base_rotation_derivatives.iter().enumerate() {
            jac.set_column(offset + 3 + k, &(d * rel));
        }
        for &j in &self.ancestors[link] {
            let col = frames.joint_axes[j].cross(&(world.coords - frames.joint_origins[j]));
            jac.set_column(offset + BASE_DOF + j, &col);
        }
        jac
    }

    /// A primitive of this robot placed at `frames`, with Jacobians in a shared variable space.
    pub fn moving_primitive(
        &self,
        frames: &LinkFrames,
        primitive: &Primitive,
        n_x: usize,
        offset: usize,
    ) -> MovingPrimitive {
        let link = match primitive.attachment() {
            Attachment::Link(l) => l,
            Attachment::World => 0,
        };
        let frame = &frames.frames[link];
        let world = primitive.place_with(&frame.rotation, &frame.translation);
        let anchor = *primitive.anchor();
        let anchor_jac = self.point_jacobian(frames, link, &anchor, n_x, offset);
        let vector_jacs = primitive
            .vectors()
            .iter()
            .map(|v| {
                // R(x) v is the difference of two link points, so its Jacobian is too
                let mut jac = self.point_jacobian(frames, link, &(anchor + v), n_x, offset);
                jac -= &anchor_jac;
                jac
            })
            .collect();
        MovingPrimitive {
            world,
            anchor_jac,
            vector_jacs,
        }
    }

    /// Bounded values at `step` (0-based): positions always, velocities from step 1 on,
    /// accelerations from step 2 on. `rows[i]` is this robot's state at step `i`.
    pub fn limit_values(&self, rows: &[&[f64]], step: usize, h: f64) -> Vec<LimitValue> {
        let mut out = Vec::new();
        for coord in 0..self.dim() {
            let spec = self.coordinate_limits(coord);
            if spec.is_empty() {
                continue;
            }
            let x = |i: usize| rows[i][coord];
            if spec.lower.is_some() || spec.upper.is_some() {
                out.push(LimitValue {
                    coord,
                    order: LimitOrder::Position,
                    value: x(step),
                    lower: spec.lower,
                    upper: spec.upper,
                });
            }
            if let Some(v) = spec.velocity {
                if step >= 1 {
                    out.push(LimitValue {
                        coord,
                        order: LimitOrder::Velocity,
                        value: (x(step) - x(step - 1)) / h,
                        lower: Some(-v),
                        upper: Some(v),
                    });
                }
            }
            if let Some(a) = spec.acceleration {
                if step >= 2 {
                    out.push(LimitValue {
                        coord,
                        order: LimitOrder::Acceleration,
                        value: (x(step) - 2.0 * x(step - 1) + x(step - 2)) / (h * h),
                        lower: Some(-a),
                        upper: Some(a),
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn hinge(parent: usize, offset: Pose, axis: Vector3<f64>) -> Joint {
        Joint {
            parent,
            offset,
            axis,
            limits: LimitSpec::default(),
        }
    }

    fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> RobotModel {
        let joints = (0..n)
            .map(|j| {
                let parent = if j == 0 { 0 } else { rng.gen_range(0..=j) };
                let axis = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                let offset = Pose::new(
                    Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(0.0..0.5),
                    ),
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ),
                );
                hinge(parent, offset, axis)
            })
            .collect();
        RobotModel::new("chain", joints, Default::default(), Vec::new()).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> RobotState {
        let x: Vec<f64> = (0..n + 6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        RobotState::from_slice(&x)
    }

    #[test]
    fn zero_state_composes_offsets() {
        let offsets = [
            Pose::new(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, 0.3)),
            Pose::new(Vector3::new(0.2, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0)),
        ];
        let robot = RobotModel::new(
            "r",
            vec![
                hinge(0, offsets[0], Vector3::z()),
                hinge(1, offsets[1], Vector3::y()),
            ],
            Default::default(),
            vec![],
        )
        .unwrap();
        let state = RobotState::new(Pose::identity(), vec![0.0, 0.0]);
        let local = Point3::new(0.1, 0.2, 0.3);
        let world = robot.forward_kinematics(&state, 2, &local).unwrap();
        let expected = offsets[0].transform_point(&offsets[1].transform_point(&local));
        assert_relative_eq!(world, expected, epsilon = 1e-14);
    }

    #[test]
    fn single_hinge_quarter_turn() {
        let robot = RobotModel::new(
            "r",
            vec![hinge(0, Pose::identity(), Vector3::z())],
            Default::default(),
            vec![],
        )
        .unwrap();
        let state = RobotState::new(Pose::identity(), vec![FRAC_PI_2]);
        let p = robot
            .forward_kinematics(&state, 1, &Point3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_relative_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);

        let zero = RobotState::new(Pose::identity(), vec![0.0]);
        let jac = robot
            .fk_jacobian(&zero, 1, &Point3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_relative_eq!(
            jac.column(6).into_owned(),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn base_translation_shifts_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let robot = random_chain(&mut rng, 4);
        let state = random_state(&mut rng, 4);
        let mut moved = state.clone();
        moved.base.translation[0] += 1.0;
        let local = Point3::new(0.1, -0.3, 0.2);
        let a = robot.forward_kinematics(&state, 3, &local).unwrap();
        let b = robot.forward_kinematics(&moved, 3, &local).unwrap();
        assert_relative_eq!(b - a, Vector3::x(), epsilon = 1e-14);
    }

    #[test]
    fn unknown_link_rejected() {
        let robot = RobotModel::free_body("b", vec![]).unwrap();
        let state = RobotState::new(Pose::identity(), vec![]);
        assert_eq!(
            robot
                .forward_kinematics(&state, 1, &Point3::origin())
                .unwrap_err(),
            Error::UnknownLink(1)
        );
        assert_eq!(
            robot.fk_jacobian(&state, 3, &Point3::origin()).unwrap_err(),
            Error::UnknownLink(3)
        );
    }

    #[test]
    fn invalid_models_rejected() {
        let bad_parent = RobotModel::new(
            "r",
            vec![hinge(1, Pose::identity(), Vector3::z())],
            Default::default(),
            vec![],
        );
        assert!(bad_parent.is_err());
        let bad_axis = RobotModel::new(
            "r",
            vec![hinge(0, Pose::identity(), Vector3::new(0.0, 0.0, 2.0))],
            Default::default(),
            vec![],
        );
        assert!(bad_axis.is_err());
        let mut j = hinge(0, Pose::identity(), Vector3::z());
        j.limits = LimitSpec {
            lower: Some(1.0),
            upper: Some(0.0),
            ..Default::default()
        };
        assert!(RobotModel::new("r", vec![j], Default::default(), vec![]).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=7 {
            let robot = random_chain(&mut rng, n);
            for _ in 0..5 {
                let state = random_state(&mut rng, n);
                let link = rng.gen_range(0..=n);
                let local = Point3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                );
                let jac = robot.fk_jacobian(&state, link, &local).unwrap();
                let x = state.to_vec();
                let eps = 1e-6;
                for k in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += eps;
                    xm[k] -= eps;
                    let fp = robot
                        .forward_kinematics(&RobotState::from_slice(&xp), link, &local)
                        .unwrap();
                    let fm = robot
                        .forward_kinematics(&RobotState::from_slice(&xm), link, &local)
                        .unwrap();
                    let fd = (fp - fm) / (2.0 * eps);
                    let col = jac.column(k).into_owned();
                    assert!(
                        (col - fd).norm() <= 1e-6 * fd.norm().max(1.0),
                        "n={n} link={link} k={k}"
                    );
                }
                assert_eq!(
                    jac.fixed_view::<3, 3>(0, 0).into_owned(),
                    nalgebra::Matrix3::identity()
                );
            }
        }
    }

    #[test]
    fn non_ancestor_columns_are_zero() {
        let robot = RobotModel::new(
            "r",
            vec![
                hinge(0, Pose::from_translation(0.0, 0.0, 1.0), Vector3::z()),
                hinge(1, Pose::from_translation(0.0, 0.0, 1.0), Vector3::x()),
                hinge(0, Pose::from_translation(1.0, 0.0, 0.0), Vector3::y()),
            ],
            Default::default(),
            vec![],
        )
        .unwrap();
        let state = RobotState::new(Pose::identity(), vec![0.3, 0.4, 0.5]);
        let jac = robot
            .fk_jacobian(&state, 1, &Point3::new(0.5, 0.2, 0.1))
            .unwrap();
        assert_eq!(jac.column(7).norm(), 0.0);
        assert_eq!(jac.column(8).norm(), 0.0);
        let jac = robot
            .fk_jacobian(&state, 3, &Point3::new(0.5, 0.2, 0.1))
            .unwrap();
        assert_eq!(jac.column(6).norm(), 0.0);
        assert_eq!(jac.column(7).norm(), 0.0);
    }

    #[test]
    fn base_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let robot = random_chain(&mut rng, 5);
        let state = random_state(&mut rng, 5);
        let g = Pose::new(Vector3::new(0.4, -1.0, 2.0), Vector3::new(0.3, 0.9, -0.4));
        // compose G with the base pose through rotation matrices, then read back Euler angles
        let gf = Frame::from_pose(&g).compose(&Frame::from_pose(&state.base));
        let r = gf.rotation;
        let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
        let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
        let moved = RobotState::new(
            Pose::new(gf.translation, Vector3::new(a, b, c)),
            state.joint_angles.clone(),
        );
        for link in 0..robot.link_count() {
            let local = Point3::new(0.2, 0.1, -0.3);
            let p = robot.forward_kinematics(&state, link, &local).unwrap();
            let q = robot.forward_kinematics(&moved, link, &local).unwrap();
            assert_relative_eq!(g.transform_point(&p), q, epsilon = 1e-10);
        }
    }

    #[test]
    fn limit_value_stencils() {
        let mut j = hinge(0, Pose::identity(), Vector3::z());
        j.limits = LimitSpec {
            lower: Some(-1.0),
            upper: Some(1.0),
            velocity: Some(2.0),
            acceleration: Some(3.0),
        };
        let robot = RobotModel::new("r", vec![j], Default::default(), vec![]).unwrap();
        let h = 0.1;
        let a = 0.01;
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let mut x = vec![0.0; 7];
                x[6] = a * (i * i) as f64;
                x
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert_eq!(robot.limit_values(&refs, 0, h).len(), 1);
        assert_eq!(robot.limit_values(&refs, 1, h).len(), 2);
        let vals = robot.limit_values(&refs, 4, h);
        assert_eq!(vals.len(), 3);
        let acc = vals
            .iter()
            .find(|v| v.order == LimitOrder::Acceleration)
            .unwrap();
        assert_relative_eq!(acc.value, 2.0 * a / (h * h), epsilon = 1e-12);

        let constant: Vec<&[f64]> = vec![&rows[2]; 4];
        for v in robot.limit_values(&constant, 3, h) {
            if v.order != LimitOrder::Position {
                assert_eq!(v.value, 0.0);
            }
        }
    }
}
