//! Scene files and trajectory export.
//!
//! A scene is one JSON document. Units are metres, radians and seconds throughout.
//!
//! ```json
//! {
//!   "robots": [{
//!     "name": "ball",
//!     "base": {"translation": [0, 0, 0], "rotation": [0, 0, 0]},
//!     "joints": [{"parent": 0, "offset": {"translation": [0, 0, 0.1]}, "axis": [0, 0, 1],
//!                 "limits": {"lower": -2.9, "upper": 2.9, "velocity": 1.5}, "initial": 0.0}],
//!     "base_limits": [{}, {}, {}, {}, {}, {}],
//!     "fixed_base": false,
//!     "primitives": [{"link": 0, "kind": "sphere", "p": [0, 0, 0], "v": [], "margin": 0.25}]
//!   }],
//!   "obstacles": [{"kind": "box", "pose": {"translation": [1, 0, 0]}, "p": [0, 0, 0],
//!                  "v": [[0.2, 0, 0], [0, 0.2, 0], [0, 0, 0.2]], "margin": 0.01}],
//!   "objectives": {
//!     "state_targets": [{"step": 10, "robot": "ball", "value": [1, 0, 0, 0, 0, 0]}],
//!     "ee_targets": [{"step": 10, "robot": 0, "link": 1, "local": [0, 0, 0.1],
//!                     "target": [0.4, 0, 0.3], "weight": 10}]
//!   },
//!   "horizon": {"steps": 10, "h": 0.1},
//!   "weights": {"w_s": 0.1, "w_r": 1e-4, "w_c": 1e4, "w_ca": 1e3, "limit_weight": 1e3},
//!   "settings": {"max_outer_iters": 500}
//! }
//! ```
//!
//! `base` is the initial base pose and `initial` a joint's initial angle (default 0).
//! Targets name their robot by index or by name. Omitted weights and settings take their
//! defaults.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::kinematics::{Joint, LimitSpec, RobotModel, RobotState, BASE_DOF};
use crate::primitives::{Attachment, Primitive, PrimitiveKind};
use crate::trajopt::{
    EeTarget, Horizon, Objectives, Obstacle, OuterSettings, RobotEntry, Scene, StateTarget,
    Trajectory, Weights,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RobotRef {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveDto {
    #[serde(default)]
    link: usize,
    kind: PrimitiveKind,
    #[serde(default)]
    p: [f64; 3],
    #[serde(default)]
    v: Vec<[f64; 3]>,
    margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDto {
    parent: usize,
    #[serde(default)]
    offset: Pose,
    axis: [f64; 3],
    #[serde(default, skip_serializing_if = "LimitSpec::is_empty")]
    limits: LimitSpec,
    #[serde(default)]
    initial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotDto {
    name: String,
    #[serde(default)]
    base: Pose,
    #[serde(default)]
    joints: Vec<JointDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_limits: Option<[LimitSpec; BASE_DOF]>,
    #[serde(default)]
    fixed_base: bool,
    #[serde(default)]
    primitives: Vec<PrimitiveDto>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleDto {
    kind: PrimitiveKind,
    #[serde(default)]
    pose: Pose,
    #[serde(default)]
    p: [f64; 3],
    #[serde(default)]
    v: Vec<[f64; 3]>,
    margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateTargetDto {
    step: usize,
    robot: RobotRef,
    value: Vec<f64>,
    #[serde(default = "unit_weight")]
    weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EeTargetDto {
    step: usize,
    robot: RobotRef,
    link: usize,
    local: [f64; 3],
    target: [f64; 3],
    #[serde(default = "unit_weight")]
    weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectivesDto {
    #[serde(default)]
    state_targets: Vec<StateTargetDto>,
    #[serde(default)]
    ee_targets: Vec<EeTargetDto>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDto {
    #[serde(default)]
    robots: Vec<RobotDto>,
    #[serde(default)]
    obstacles: Vec<ObstacleDto>,
    #[serde(default)]
    objectives: ObjectivesDto,
    horizon: Horizon,
    #[serde(default)]
    weights: Weights,
    #[serde(default)]
    settings: OuterSettings,
}

fn json_error(e: serde_json::Error) -> Error {
    let full = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
    match e.classify() {
        serde_json::error::Category::Data => Error::Semantic(format!(
            "line {}, column {}: {message}",
            e.line(),
            e.column()
        )),
        _ => Error::Syntax {
            line: e.line(),
            column: e.column(),
            message,
        },
    }
}

fn in_context(what: &str, e: Error) -> Error {
    match e {
        Error::InvalidPrimitive(m) | Error::Semantic(m) => Error::Semantic(format!("{what}: {m}")),
        other => Error::Semantic(format!("{what}: {other}")),
    }
}

fn build_primitive(
    kind: PrimitiveKind,
    p: [f64; 3],
    v: &[[f64; 3]],
    margin: f64,
) -> Result<Primitive> {
    Primitive::new(
        kind,
        Point3::from(p),
        v.iter().map(|&c| Vector3::from(c)).collect(),
        margin,
    )
}

fn build_robot(dto: RobotDto) -> Result<RobotEntry> {
    let what = format!("robot {}", dto.name);
    let primitives = dto
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| {
            build_primitive(p.kind, p.p, &p.v, p.margin)
                .map(|prim| prim.attached_to(Attachment::Link(p.link)))
                .map_err(|e| in_context(&format!("{what}, primitive {i}"), e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut joints = Vec::with_capacity(dto.joints.len());
    for (j, joint) in dto.joints.iter().enumerate() {
        let axis = Vector3::from(joint.axis);
        let norm = axis.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Semantic(format!(
                "{what}, joint {j}: axis must be a non-zero vector"
            )));
        }
        joints.push(Joint {
            parent: joint.parent,
            offset: joint.offset,
            axis: axis / norm,
            limits: joint.limits,
        });
    }
    let initial = RobotState::new(dto.base, dto.joints.iter().map(|j| j.initial).collect());
    let model = RobotModel::new(
        dto.name,
        joints,
        dto.base_limits.unwrap_or_default(),
        primitives,
    )?;
    Ok(RobotEntry {
        model,
        initial,
        fixed_base: dto.fixed_base,
    })
}

fn resolve_robot(robots: &[RobotEntry], what: &str, r: &RobotRef) -> Result<usize> {
    match r {
        RobotRef::Index(i) => Ok(*i),
        RobotRef::Name(name) => {
            let mut hits = robots
                .iter()
                .enumerate()
                .filter(|(_, e)| e.model.name() == name);
            match (hits.next(), hits.next()) {
                (Some((i, _)), None) => Ok(i),
                (None, _) => Err(Error::InvalidReference(format!(
                    "{what}: unknown robot \"{name}\""
                ))),
                (Some(_), Some(_)) => Err(Error::InvalidReference(format!(
                    "{what}: robot name \"{name}\" is ambiguous"
                ))),
            }
        }
    }
}

fn build_scene(dto: SceneDto) -> Result<Scene> {
    let robots = dto
        .robots
        .into_iter()
        .map(build_robot)
        .collect::<Result<Vec<_>>>()?;
    let obstacles = dto
        .obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| {
            Ok(Obstacle {
                primitive: build_primitive(o.kind, o.p, &o.v, o.margin)
                    .map_err(|e| in_context(&format!("obstacle {i}"), e))?,
                pose: o.pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut objectives = Objectives::default();
    for (i, t) in dto.objectives.state_targets.into_iter().enumerate() {
        objectives.state_targets.push(StateTarget {
            step: t.step,
            robot: resolve_robot(&robots, &format!("state target {i}"), &t.robot)?,
            value: t.value,
            weight: t.weight,
        });
    }
    for (i, t) in dto.objectives.ee_targets.into_iter().enumerate() {
        objectives.ee_targets.push(EeTarget {
            step: t.step,
            robot: resolve_robot(&robots, &format!("end-effector target {i}"), &t.robot)?,
            link: t.link,
            local: t.local,
            target: t.target,
            weight: t.weight,
        });
    }
    Scene::new(
        robots,
        obstacles,
        objectives,
        dto.horizon,
        dto.weights,
        dto.settings,
    )
}

/// Parses and validates a scene document.
pub fn load_scene(text: &str) -> Result<Scene> {
    let dto: SceneDto = serde_json::from_str(text).map_err(json_error)?;
    build_scene(dto)
}

/// Parses an already decoded document, e.g. after [`apply_override`].
pub fn scene_from_value(value: Value) -> Result<Scene> {
    let dto: SceneDto = serde_json::from_value(value).map_err(json_error)?;
    build_scene(dto)
}

/// Parses `text` into a JSON value without interpreting it as a scene.
pub fn parse_document(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(json_error)
}

/// Sets the field at a dotted `path` (e.g. `settings.max_outer_iters` or
/// `robots.0.fixed_base`) to `raw`, read as JSON when it parses and as a string otherwise.
/// Missing object keys are created.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for key in path.split('.') {
        if key.is_empty() {
            return Err(Error::Semantic(format!(
                "override path \"{path}\" has an empty component"
            )));
        }
        node = match node {
            Value::Object(map) => map.entry(key.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let len = items.len();
                key.parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| {
                        Error::Semantic(format!(
                            "override path \"{path}\": no element {key} in an array of {len}"
                        ))
                    })?
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else {
                    unreachable!()
                };
                map.entry(key.to_string()).or_insert(Value::Null)
            }
            _ => {
                return Err(Error::Semantic(format!(
                    "override path \"{path}\": \"{key}\" is inside a scalar"
                )))
            }
        };
    }
    *node = value;
    Ok(())
}

fn primitive_fields(p: &Primitive) -> ([f64; 3], Vec<[f64; 3]>) {
    (
        p.anchor().coords.into(),
        p.vectors().iter().map(|v| (*v).into()).collect(),
    )
}

fn to_dto(scene: &Scene) -> SceneDto {
    let robots = scene
        .robots()
        .iter()
        .map(|entry| {
            let model = &entry.model;
            let joints = model
                .joints()
                .iter()
                .zip(&entry.initial.joint_angles)
                .map(|(j, &initial)| JointDto {
                    parent: j.parent,
                    offset: j.offset,
                    axis: j.axis.into(),
                    limits: j.limits,
                    initial,
                })
                .collect();
            let primitives = model
                .primitives()
                .iter()
                .map(|p| {
                    let (anchor, v) = primitive_fields(p);
                    PrimitiveDto {
                        link: match p.attachment() {
                            Attachment::Link(l) => l,
                            Attachment::World => 0,
                        },
                        kind: p.kind(),
                        p: anchor,
                        v,
                        margin: p.margin(),
                    }
                })
                .collect();
            let base_limits = model.base_limits();
            RobotDto {
                name: model.name().to_string(),
                base: entry.initial.base,
                joints,
                base_limits: base_limits
                    .iter()
                    .any(|l| !l.is_empty())
                    .then_some(*base_limits),
                fixed_base: entry.fixed_base,
                primitives,
            }
        })
        .collect();
    let obstacles = scene
        .obstacles()
        .iter()
        .map(|o| {
            let (p, v) = primitive_fields(&o.primitive);
            ObstacleDto {
                kind: o.primitive.kind(),
                pose: o.pose,
                p,
                v,
                margin: o.primitive.margin(),
            }
        })
        .collect();
    let objectives = scene.objectives();
    SceneDto {
        robots,
        obstacles,
        objectives: ObjectivesDto {
            state_targets: objectives
                .state_targets
                .iter()
                .map(|t| StateTargetDto {
                    step: t.step,
                    robot: RobotRef::Index(t.robot),
                    value: t.value.clone(),
                    weight: t.weight,
                })
                .collect(),
            ee_targets: objectives
                .ee_targets
                .iter()
                .map(|t| EeTargetDto {
                    step: t.step,
                    robot: RobotRef::Index(t.robot),
                    link: t.link,
                    local: t.local,
                    target: t.target,
                    weight: t.weight,
                })
                .collect(),
        },
        horizon: scene.horizon(),
        weights: scene.weights(),
        settings: scene.settings(),
    }
}

/// Serializes `scene` as a pretty-printed document that [`load_scene`] reads back to an
/// equal scene. Every weight and setting is written out.
pub fn save_scene(scene: &Scene) -> String {
    serde_json::to_string_pretty(&to_dto(scene))
        .expect("scene documents contain only finite numbers")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Coordinate column names: the base pose, then joint angles up to the longest robot.
pub fn coordinate_names(scene: &Scene) -> Vec<String> {
    let joints = scene
        .robots()
        .iter()
        .map(|r| r.model.joint_count())
        .max()
        .unwrap_or(0);
    ["x", "y", "z", "rx", "ry", "rz"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=joints).map(|j| format!("q{j}")))
        .collect()
}

#[derive(Serialize)]
struct RobotRows<'a> {
    name: &'a str,
    /// One state per step.
    states: Vec<&'a [f64]>,
}

#[derive(Serialize)]
struct TrajectoryDocument<'a> {
    steps: usize,
    h: f64,
    times: Vec<f64>,
    coordinates: Vec<String>,
    robots: Vec<RobotRows<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_clearance: Option<&'a [Option<f64>]>,
}

/// Renders `traj` with one row per step and robot. Times are `(i − 1) h` for step `i`.
/// Numbers use the shortest representation that parses back to the same `f64`. The JSON
/// form also carries the per-step minimum clearance when given.
pub fn export_trajectory(
    traj: &Trajectory,
    scene: &Scene,
    format: ExportFormat,
    min_clearance: Option<&[Option<f64>]>,
) -> Result<String> {
    scene.check_trajectory(traj)?;
    let h = traj.h();
    let names = coordinate_names(scene);
    let robot_rows = |r: usize| {
        let o = scene.robot_offset(r);
        let d = scene.robots()[r].model.dim();
        (0..traj.steps()).map(move |i| &traj.row(i)[o..o + d])
    };
    match format {
        ExportFormat::Csv => {
            let mut out = format!("step,time,robot,{}\n", names.join(","));
            for i in 0..traj.steps() {
                for (r, entry) in scene.robots().iter().enumerate() {
                    let state = robot_rows(r).nth(i).expect("step within trajectory");
                    out.push_str(&format!(
                        "{},{},{}",
                        i + 1,
                        i as f64 * h,
                        entry.model.name()
                    ));
                    for k in 0..names.len() {
                        out.push(',');
                        if let Some(v) = state.get(k) {
                            out.push_str(&v.to_string());
                        }
                    }
                    out.push('\n');
                }
            }
            Ok(out)
        }
        ExportFormat::Json => {
            let doc = TrajectoryDocument {
                steps: traj.steps(),
                h,
                times: (0..traj.steps()).map(|i| i as f64 * h).collect(),
                coordinates: names,
                robots: scene
                    .robots()
                    .iter()
                    .enumerate()
                    .map(|(r, e)| RobotRows {
                        name: e.model.name(),
                        states: robot_rows(r).collect(),
                    })
                    .collect(),
                min_clearance,
            };
            Ok(serde_json::to_string_pretty(&doc).expect("trajectory values are finite"))
        }
    }
}
