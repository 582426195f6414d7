//! Broad-phase culling and the collision penalty `w_CA · S⁻_{(r_a + r_b)²}(D)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distance::{solve_inner, InnerSettings, ParamVector, ProximityResult};
use crate::error::{Error, Result};
use crate::kinematics::LinkFrames;
use crate::primitives::WorldPrimitive;
use crate::sensitivity::{pair_derivatives, MovingPrimitive};

use super::scene::{link_of, CollisionHessian, PrimitivePair, PrimitiveRef, Scene, Trajectory};
use super::terms::Assembly;

/// Inner minimizers from the last accepted iterate, per step and pair.
pub type WarmStarts = Vec<HashMap<PrimitivePair, ParamVector>>;

/// Link frames of every robot and world placement of every primitive at one step.
#[derive(Clone, Debug)]
pub struct StepGeometry {
    pub frames: Vec<LinkFrames>,
    /// Indexed by global primitive index.
    pub world: Vec<WorldPrimitive>,
}

impl StepGeometry {
    pub fn new(scene: &Scene, row: &[f64]) -> Self {
        let frames: Vec<LinkFrames> = scene
            .robots()
            .iter()
            .enumerate()
            .map(|(r, entry)| {
                entry
                    .model
                    .link_frames(&scene.robot_state(row, r))
                    .expect("state block sized by the scene")
            })
            .collect();
        let world = (0..scene.primitive_count())
            .map(|g| match scene.primitive_ref(g) {
                PrimitiveRef::Robot { robot, index } => {
                    let primitive = &scene.robots()[robot].model.primitives()[index];
                    let frame = &frames[robot].frames[link_of(primitive)];
                    primitive.place_with(&frame.rotation, &frame.translation)
                }
                PrimitiveRef::Obstacle(i) => scene.obstacle_world(i).clone(),
            })
            .collect();
        Self { frames, world }
    }

    fn retained(&self, pair: &PrimitivePair, slack: f64) -> bool {
        let (ca, ra) = self.world[pair.a].bounding_center_radius();
        let (cb, rb) = self.world[pair.b].bounding_center_radius();
        (ca - cb).norm() <= ra + rb + slack
    }
}

/// Candidate pairs at 0-based `step` whose bounding spheres, grown by `slack`, overlap.
pub fn broad_phase(
    scene: &Scene,
    traj: &Trajectory,
    step: usize,
    slack: f64,
) -> Result<Vec<PrimitivePair>> {
    scene.check_trajectory(traj)?;
    let geometry = StepGeometry::new(scene, traj.row(step));
    Ok(scene
        .candidate_pairs()
        .iter()
        .filter(|p| geometry.retained(p, slack))
        .copied()
        .collect())
}

/// Converged inner solution for one retained pair.
#[derive(Clone, Debug)]
pub struct PairProximity {
    pub pair: PrimitivePair,
    pub result: ProximityResult,
    /// `(r_a + r_b)²`.
    pub threshold: f64,
}

impl PairProximity {
    pub fn clearance(&self) -> f64 {
        self.result.distance() - self.threshold.sqrt()
    }
}

/// Collision state of one step.
#[derive(Clone, Debug)]
pub(crate) struct StepEvaluation {
    pub geometry: StepGeometry,
    pub pairs: Vec<PairProximity>,
    pub value: f64,
}

pub(crate) fn pair_label(scene: &Scene, pair: &PrimitivePair) -> String {
    format!(
        "{}:{}",
        scene.primitive_label(pair.a),
        scene.primitive_label(pair.b)
    )
}

fn solve_pair(
    scene: &Scene,
    geometry: &StepGeometry,
    pair: PrimitivePair,
    step: usize,
    inner: &InnerSettings,
    warm: Option<&ParamVector>,
) -> Result<PairProximity> {
    let (a, b) = (&geometry.world[pair.a], &geometry.world[pair.b]);
    let wrap = |source: Error| Error::PairSolve {
        pair: pair_label(scene, &pair),
        step: step + 1,
        source: Box::new(source),
    };
    let result = solve_inner(a, b, inner, warm.map(|w| w.as_slice())).map_err(wrap)?;
    if !result.converged {
        return Err(wrap(Error::NotConverged {
            grad_norm: result.grad_norm,
            steps: result.newton_steps,
        }));
    }
    let rho = a.margin + b.margin;
    Ok(PairProximity {
        pair,
        result,
        threshold: rho * rho,
    })
}

pub(crate) fn evaluate_step(
    scene: &Scene,
    row: &[f64],
    step: usize,
    pairs: Option<&[PrimitivePair]>,
    warm: Option<&HashMap<PrimitivePair, ParamVector>>,
) -> Result<StepEvaluation> {
    let geometry = StepGeometry::new(scene, row);
    let inner = scene.inner_settings();
    let w_ca = scene.weights().w_ca;
    let slack = scene.settings().broad_phase_slack;
    let active: Vec<PrimitivePair> = match pairs {
        Some(p) => p.to_vec(),
        None => scene
            .candidate_pairs()
            .iter()
            .filter(|p| geometry.retained(p, slack))
            .copied()
            .collect(),
    };
    let mut value = 0.0;
    let mut solved = Vec::with_capacity(active.len());
    for pair in active {
        let start = warm.and_then(|w| w.get(&pair));
        let prox = solve_pair(scene, &geometry, pair, step, &inner, start)?;
        let gap = prox.threshold - prox.result.d_sq;
        if gap > 0.0 {
            value += w_ca * gap * gap;
        }
        solved.push(prox);
    }
    Ok(StepEvaluation {
        geometry,
        pairs: solved,
        value,
    })
}

/// Moving primitives of `pair` over the stacked states of the robots it involves, and the
/// positions of those state coordinates within a step row.
pub(crate) fn pair_space(
    scene: &Scene,
    geometry: &StepGeometry,
    pair: &PrimitivePair,
) -> (Vec<usize>, MovingPrimitive, MovingPrimitive) {
    let mut robots: Vec<usize> = [pair.a, pair.b]
        .iter()
        .filter_map(|&g| match scene.primitive_ref(g) {
            PrimitiveRef::Robot { robot, .. } => Some(robot),
            PrimitiveRef::Obstacle(_) => None,
        })
        .collect();
    robots.dedup();
    let mut local_offsets = HashMap::new();
    let mut coords = Vec::new();
    for &r in &robots {
        local_offsets.insert(r, coords.len());
        let o = scene.robot_offset(r);
        coords.extend(o..o + scene.robots()[r].model.dim());
    }
    let n_x = coords.len();
    let moving = |g: usize| match scene.primitive_ref(g) {
        PrimitiveRef::Robot { robot, index } => {
            let model = &scene.robots()[robot].model;
            model.moving_primitive(
                &geometry.frames[robot],
                &model.primitives()[index],
                n_x,
                local_offsets[&robot],
            )
        }
        PrimitiveRef::Obstacle(_) => MovingPrimitive::fixed(geometry.world[g].clone(), n_x),
    };
    let (a, b) = (moving(pair.a), moving(pair.b));
    (coords, a, b)
}

/// Dense gradient and Hessian block over the listed global indices.
pub(crate) type DenseBlock = (Vec<usize>, DVector<f64>, DMatrix<f64>);

/// Gradient and Hessian contributions of one step's penalized pairs.
pub(crate) fn step_derivatives(
    scene: &Scene,
    traj: &Trajectory,
    step: usize,
    eval: &StepEvaluation,
) -> Result<Vec<DenseBlock>> {
    let inner = scene.inner_settings();
    let w_ca = scene.weights().w_ca;
    let curvature = scene.settings().collision_hessian;
    let mut out = Vec::new();
    for prox in &eval.pairs {
        let gap = prox.threshold - prox.result.d_sq;
        if gap <= 0.0 {
            continue;
        }
        let (coords, a, b) = pair_space(scene, &eval.geometry, &prox.pair);
        let row_start = traj.index(step, 0);
        let indices: Vec<usize> = coords.iter().map(|c| row_start + c).collect();
        let derivs =
            pair_derivatives(&a, &b, &prox.result, &inner).map_err(|source| Error::PairSolve {
                pair: pair_label(scene, &prox.pair),
                step: step + 1,
                source: Box::new(source),
            })?;
        // d/dD of w (ρ² − D)² is −2w(ρ² − D); the second derivative is 2w
        let slope = -2.0 * w_ca * gap;
        let grad = &derivs.grad_x * slope;
        let mut hess = &derivs.grad_x * derivs.grad_x.transpose() * (2.0 * w_ca);
        if curvature == CollisionHessian::Full {
            hess += &derivs.hess_xx * slope;
        }
        out.push((indices, grad, hess));
    }
    Ok(out)
}

/// Penalty over the given per-step pair lists (0-based steps), with fresh inner solves.
pub fn collision_penalty(
    scene: &Scene,
    traj: &Trajectory,
    active: &[Vec<PrimitivePair>],
) -> Result<Assembly> {
    scene.check_trajectory(traj)?;
    if active.len() != traj.steps() {
        return Err(Error::DimensionMismatch {
            expected: traj.steps(),
            found: active.len(),
        });
    }
    let mut out = Assembly::zeros(traj);
    let blocks: Vec<_> = (0..traj.steps())
        .into_par_iter()
        .map(|i| {
            let eval = evaluate_step(scene, traj.row(i), i, Some(&active[i]), None)?;
            let derivs = step_derivatives(scene, traj, i, &eval)?;
            Ok((eval.value, derivs))
        })
        .collect::<Result<_>>()?;
    for (value, derivs) in blocks {
        out.value += value;
        for (indices, grad, hess) in derivs {
            out.add_block(&indices, &grad, &hess);
        }
    }
    Ok(out)
}
