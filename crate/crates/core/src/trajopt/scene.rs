use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::distance::InnerSettings;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::kinematics::{RobotModel, RobotState, BASE_DOF};
use crate::primitives::{Attachment, Primitive, WorldPrimitive};

/// Target for one robot's full state at one step (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateTarget {
    pub step: usize,
    pub robot: usize,
    pub value: Vec<f64>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

/// World-frame target for a link-local point at one step (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EeTarget {
    pub step: usize,
    pub robot: usize,
    pub link: usize,
    pub local: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objectives {
    #[serde(default)]
    pub state_targets: Vec<StateTarget>,
    #[serde(default)]
    pub ee_targets: Vec<EeTarget>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    /// Smoothness (squared acceleration).
    pub w_s: f64,
    /// Inner regularizer.
    pub w_r: f64,
    /// Inner box-constraint penalty.
    pub w_c: f64,
    /// Collision penalty.
    pub w_ca: f64,
    pub limit_weight: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w_s: 0.1,
            w_r: 1e-4,
            w_c: 1e4,
            w_ca: 1e3,
            limit_weight: 1e3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub steps: usize,
    /// Step duration in seconds.
    #[serde(default = "default_step_duration")]
    pub h: f64,
}

fn default_step_duration() -> f64 {
    0.1
}

/// Hessian used for a penalized collision pair `w (ρ² − D)²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionHessian {
    /// `2w ∇D ∇Dᵀ + 2w (D − ρ²) ∇²D`, with `∇²D` from the pair sensitivity.
    #[default]
    Full,
    /// `2w ∇D ∇Dᵀ` only; always positive semidefinite.
    GaussNewton,
}

/// Outer Newton loop, line search, damping and broad-phase parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSettings {
    pub max_outer_iters: usize,
    /// Stop when the largest gradient entry is at most this.
    pub grad_tol: f64,
    /// Also stop when the undamped Newton step predicts a decrease below this fraction of
    /// the objective.
    pub stall_tol: f64,
    pub initial_step: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub damping_initial: f64,
    pub damping_growth: f64,
    pub damping_min: f64,
    pub damping_max: f64,
    /// Extra distance (m) added to bounding radii before a pair is culled.
    pub broad_phase_slack: f64,
    /// Weight of the equality pinning step 1 (and fixed bases) to the initial state.
    pub pin_weight: f64,
    pub inner_grad_tol: f64,
    pub inner_max_iters: usize,
    pub collision_hessian: CollisionHessian,
}

impl Default for OuterSettings {
    fn default() -> Self {
        Self {
            max_outer_iters: 500,
            grad_tol: 1e-6,
            stall_tol: 1e-12,
            initial_step: 1.0,
            backtrack: 0.5,
            max_halvings: 20,
            armijo: 1e-4,
            damping_initial: 1e-8,
            damping_growth: 10.0,
            damping_min: 1e-10,
            damping_max: 1e12,
            broad_phase_slack: 0.1,
            pin_weight: 1e6,
            inner_grad_tol: 1e-10,
            inner_max_iters: 50,
            collision_hessian: CollisionHessian::Full,
        }
    }
}

impl OuterSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("initial_step", self.initial_step),
            ("damping_initial", self.damping_initial),
            ("damping_min", self.damping_min),
            ("damping_max", self.damping_max),
            ("armijo", self.armijo),
            ("inner_grad_tol", self.inner_grad_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Semantic(format!(
                    "settings.{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("stall_tol", self.stall_tol),
            ("broad_phase_slack", self.broad_phase_slack),
            ("pin_weight", self.pin_weight),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Semantic(format!(
                    "settings.{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Semantic(
                "settings.backtrack must lie in (0, 1)".into(),
            ));
        }
        if !(self.damping_growth > 1.0) {
            return Err(Error::Semantic(
                "settings.damping_growth must exceed 1".into(),
            ));
        }
        if self.max_outer_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::Semantic(
                "iteration limits must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A robot model, its current state, and whether its base is held in place.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotEntry {
    pub model: RobotModel,
    pub initial: RobotState,
    pub fixed_base: bool,
}

/// A primitive placed in the world at a fixed pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Obstacle {
    pub primitive: Primitive,
    pub pose: Pose,
}

/// Where a global primitive index points to. Robot primitives come first, in robot order,
/// followed by the obstacles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveRef {
    Robot { robot: usize, index: usize },
    Obstacle(usize),
}

/// Two global primitive indices with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrimitivePair {
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    robots: Vec<RobotEntry>,
    obstacles: Vec<Obstacle>,
    objectives: Objectives,
    horizon: Horizon,
    weights: Weights,
    settings: OuterSettings,
    offsets: Vec<usize>,
    dim: usize,
    refs: Vec<PrimitiveRef>,
    obstacle_world: Vec<WorldPrimitive>,
    pairs: Vec<PrimitivePair>,
}

fn check_weight(what: &str, w: f64) -> Result<()> {
    if w >= 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::Semantic(format!(
            "{what} must be a non-negative number, got {w}"
        )))
    }
}

impl Scene {
    pub fn new(
        robots: Vec<RobotEntry>,
        obstacles: Vec<Obstacle>,
        objectives: Objectives,
        horizon: Horizon,
        weights: Weights,
        settings: OuterSettings,
    ) -> Result<Self> {
        if horizon.steps == 0 {
            return Err(Error::Semantic("horizon.steps must be at least 1".into()));
        }
        if !(horizon.h > 0.0 && horizon.h.is_finite()) {
            return Err(Error::Semantic(format!(
                "horizon.h must be positive, got {}",
                horizon.h
            )));
        }
        settings.validate()?;
        check_weight("weights.w_s", weights.w_s)?;
        check_weight("weights.w_ca", weights.w_ca)?;
        check_weight("weights.limit_weight", weights.limit_weight)?;

        let mut offsets = Vec::with_capacity(robots.len());
        let mut dim = 0;
        let mut refs = Vec::new();
        for (r, entry) in robots.iter().enumerate() {
            if entry.initial.joint_angles.len() != entry.model.joint_count() {
                return Err(Error::Semantic(format!(
                    "robot {}: initial state has {} joint angles, model has {} joints",
                    entry.model.name(),
                    entry.initial.joint_angles.len(),
                    entry.model.joint_count()
                )));
            }
            offsets.push(dim);
            dim += entry.model.dim();
            refs.extend(
                (0..entry.model.primitives().len())
                    .map(|index| PrimitiveRef::Robot { robot: r, index }),
            );
        }
        for (i, obstacle) in obstacles.iter().enumerate() {
            if obstacle.primitive.attachment() != Attachment::World {
                return Err(Error::Semantic(format!(
                    "obstacle {i} must be attached to the world"
                )));
            }
            refs.push(PrimitiveRef::Obstacle(i));
        }
        let obstacle_world = obstacles
            .iter()
            .map(|o| o.primitive.place(&o.pose))
            .collect();

        let mut scene = Self {
            robots,
            obstacles,
            objectives: Objectives::default(),
            horizon,
            weights,
            settings,
            offsets,
            dim,
            refs,
            obstacle_world,
            pairs: Vec::new(),
        };
        scene.inner_settings().validate()?;
        scene.check_objectives(&objectives)?;
        scene.objectives = objectives;
        scene.pairs = scene.enumerate_pairs();
        Ok(scene)
    }

    fn check_objectives(&self, objectives: &Objectives) -> Result<()> {
        let n = self.horizon.steps;
        let check_step = |what: &str, step: usize| {
            if step == 0 || step > n {
                Err(Error::InvalidReference(format!(
                    "{what}: step {step} outside 1..={n}"
                )))
            } else {
                Ok(())
            }
        };
        let check_robot = |what: &str, robot: usize| {
            self.robots
                .get(robot)
                .ok_or_else(|| Error::InvalidReference(format!("{what}: unknown robot {robot}")))
        };
        for (i, t) in objectives.state_targets.iter().enumerate() {
            let what = format!("state target {i}");
            check_step(&what, t.step)?;
            let robot = check_robot(&what, t.robot)?;
            if t.value.len() != robot.model.dim() {
                return Err(Error::InvalidReference(format!(
                    "{what}: value has {} entries, robot {} has state dimension {}",
                    t.value.len(),
                    robot.model.name(),
                    robot.model.dim()
                )));
            }
            check_weight(&format!("{what} weight"), t.weight)?;
        }
        for (i, t) in objectives.ee_targets.iter().enumerate() {
            let what = format!("end-effector target {i}");
            check_step(&what, t.step)?;
            let robot = check_robot(&what, t.robot)?;
            if t.link >= robot.model.link_count() {
                return Err(Error::InvalidReference(format!(
                    "{what}: robot {} has no link {}",
                    robot.model.name(),
                    t.link
                )));
            }
            check_weight(&format!("{what} weight"), t.weight)?;
        }
        Ok(())
    }

    /// Candidate collision pairs: everything except obstacle–obstacle pairs and pairs on the
    /// same or adjacent links of one robot.
    fn enumerate_pairs(&self) -> Vec<PrimitivePair> {
        let mut out = Vec::new();
        for a in 0..self.refs.len() {
            for b in (a + 1)..self.refs.len() {
                let keep = match (self.refs[a], self.refs[b]) {
                    (PrimitiveRef::Obstacle(_), PrimitiveRef::Obstacle(_)) => false,
                    (
                        PrimitiveRef::Robot {
                            robot: ra,
                            index: ia,
                        },
                        PrimitiveRef::Robot {
                            robot: rb,
                            index: ib,
                        },
                    ) if ra == rb => {
                        let model = &self.robots[ra].model;
                        let la = link_of(&model.primitives()[ia]);
                        let lb = link_of(&model.primitives()[ib]);
                        la != lb && !model.adjacent(la, lb)
                    }
                    _ => true,
                };
                if keep {
                    out.push(PrimitivePair { a, b });
                }
            }
        }
        out
    }

    pub fn robots(&self) -> &[RobotEntry] {
        &self.robots
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn objectives(&self) -> &Objectives {
        &self.objectives
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn settings(&self) -> OuterSettings {
        self.settings
    }

    pub fn set_settings(&mut self, settings: OuterSettings) -> Result<()> {
        settings.validate()?;
        self.settings = settings;
        self.inner_settings().validate()
    }

    /// Stacked state dimension of all robots.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Offset of robot `r`'s block inside a stacked state.
    pub fn robot_offset(&self, r: usize) -> usize {
        self.offsets[r]
    }

    pub fn primitive_count(&self) -> usize {
        self.refs.len()
    }

    pub fn primitive_ref(&self, global: usize) -> PrimitiveRef {
        self.refs[global]
    }

    pub fn primitive(&self, global: usize) -> &Primitive {
        match self.refs[global] {
            PrimitiveRef::Robot { robot, index } => &self.robots[robot].model.primitives()[index],
            PrimitiveRef::Obstacle(i) => &self.obstacles[i].primitive,
        }
    }

    /// Human-readable name such as `arm/3` or `obstacle/0`.
    pub fn primitive_label(&self, global: usize) -> String {
        match self.refs[global] {
            PrimitiveRef::Robot { robot, index } => {
                format!("{}/{index}", self.robots[robot].model.name())
            }
            PrimitiveRef::Obstacle(i) => format!("obstacle/{i}"),
        }
    }

    pub fn obstacle_world(&self, i: usize) -> &WorldPrimitive {
        &self.obstacle_world[i]
    }

    pub fn candidate_pairs(&self) -> &[PrimitivePair] {
        &self.pairs
    }

    pub fn inner_settings(&self) -> InnerSettings {
        InnerSettings {
            w_r: self.weights.w_r,
            w_c: self.weights.w_c,
            grad_tol: self.settings.inner_grad_tol,
            max_iters: self.settings.inner_max_iters,
        }
    }

    /// Stacked initial state of all robots.
    pub fn initial_state(&self) -> Vec<f64> {
        self.robots
            .iter()
            .flat_map(|r| r.initial.to_vec())
            .collect()
    }

    /// Robot `r`'s state within a stacked row.
    pub fn robot_state(&self, row: &[f64], r: usize) -> RobotState {
        let o = self.offsets[r];
        RobotState::from_slice(&row[o..o + self.robots[r].model.dim()])
    }

    /// Linear interpolation from the initial state to each robot's nearest state target,
    /// constant afterwards; constant at the initial state for robots without targets.
    pub fn initial_trajectory(&self) -> Trajectory {
        let n = self.horizon.steps;
        let start = self.initial_state();
        let mut traj = Trajectory::constant(&start, n, self.horizon.h);
        for (r, entry) in self.robots.iter().enumerate() {
            let nearest = self
                .objectives
                .state_targets
                .iter()
                .filter(|t| t.robot == r && t.step > 1)
                .min_by_key(|t| t.step);
            let Some(target) = nearest else { continue };
            let o = self.offsets[r];
            let from = entry.initial.to_vec();
            for i in 0..n {
                let s = ((i as f64) / (target.step - 1) as f64).min(1.0);
                let row = traj.row_mut(i);
                for (k, (a, b)) in from.iter().zip(&target.value).enumerate() {
                    row[o + k] = a + s * (b - a);
                }
            }
        }
        traj
    }

    pub(crate) fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: traj.dim(),
            });
        }
        if traj.steps() != self.horizon.steps {
            return Err(Error::DimensionMismatch {
                expected: self.horizon.steps,
                found: traj.steps(),
            });
        }
        Ok(())
    }

    /// Indices of robot `r`'s base coordinates within a stacked state.
    pub(crate) fn base_coords(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r] + BASE_DOF
    }
}

pub(crate) fn link_of(p: &Primitive) -> usize {
    match p.attachment() {
        Attachment::Link(l) => l,
        Attachment::World => 0,
    }
}

pub(crate) fn local_point(p: [f64; 3]) -> Point3<f64> {
    Point3::new(p[0], p[1], p[2])
}

/// `N` stacked states of dimension `dim`, stored row-major, with step duration `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    steps: usize,
    dim: usize,
    h: f64,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(steps: usize, dim: usize, h: f64, data: Vec<f64>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Semantic("trajectory needs at least one step".into()));
        }
        if !(h > 0.0) {
            return Err(Error::Semantic(format!(
                "step duration must be positive, got {h}"
            )));
        }
        if data.len() != steps * dim {
            return Err(Error::DimensionMismatch {
                expected: steps * dim,
                found: data.len(),
            });
        }
        Ok(Self {
            steps,
            dim,
            h,
            data,
        })
    }

    pub fn constant(state: &[f64], steps: usize, h: f64) -> Self {
        let data = (0..steps).flat_map(|_| state.iter().copied()).collect();
        Self {
            steps,
            dim: state.len(),
            h,
            data,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// State at 0-based step `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// All states flattened step by step; this is the optimization variable.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..*self }
    }

    pub fn index(&self, step: usize, coord: usize) -> usize {
        step * self.dim + coord
    }
}
