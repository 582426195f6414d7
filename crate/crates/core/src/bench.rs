//! Randomized workloads: per-kind-pair Newton statistics and the primitive-count study.

use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::Serialize;

use crate::distance::{solve_inner, InnerSettings};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::kinematics::{RobotModel, RobotState};
use crate::oracle::exact_distance;
use crate::primitives::{Attachment, Primitive, PrimitiveKind, WorldPrimitive};
use crate::trajopt::{
    broad_phase, clearance_profile, objective, Horizon, Objectives, OuterSettings, RobotEntry,
    Scene, StateTarget, Trajectory, Weights,
};

/// The ten unordered kind combinations, in table order.
pub fn kind_pairs() -> Vec<(PrimitiveKind, PrimitiveKind)> {
    let mut out = Vec::new();
    for (i, &b) in PrimitiveKind::ALL.iter().enumerate() {
        for &a in &PrimitiveKind::ALL[..=i] {
            out.push((b, a));
        }
    }
    out
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
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

/// A unit-scale primitive of `kind` centered at the local origin.
pub fn random_primitive(rng: &mut impl Rng, kind: PrimitiveKind) -> Primitive {
    loop {
        let vectors: Vec<Vector3<f64>> = (0..kind.arity())
            .map(|_| random_unit(rng) * rng.gen_range(0.3..1.2))
            .collect();
        let anchor = Point3::from(-vectors.iter().sum::<Vector3<f64>>() * 0.5);
        let margin = rng.gen_range(0.05..0.2);
        if let Ok(p) = Primitive::new(kind, anchor, vectors, margin) {
            return p;
        }
    }
}

pub fn random_pose(rng: &mut impl Rng, extent: f64) -> Pose {
    let t = Vector3::new(
        rng.gen_range(-extent..extent),
        rng.gen_range(-extent..extent),
        rng.gen_range(-extent..extent),
    );
    let r = Vector3::new(
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    Pose::new(t, r)
}

/// Two random primitives at random poses within a 2.5 m cube, so some pairs intersect.
pub fn random_world_pair(
    rng: &mut impl Rng,
    a: PrimitiveKind,
    b: PrimitiveKind,
) -> (WorldPrimitive, WorldPrimitive) {
    let pa = random_primitive(rng, a).place(&random_pose(rng, 1.25));
    let pb = random_primitive(rng, b).place(&random_pose(rng, 1.25));
    (pa, pb)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairStats {
    pub kind_a: PrimitiveKind,
    pub kind_b: PrimitiveKind,
    pub runs: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub mean_steps: f64,
    pub mean_micros: f64,
    pub converged: usize,
}

/// Newton step counts and timing per kind combination over `reps` random configurations.
pub fn kind_pair_study(reps: usize, seed: u64, settings: &InnerSettings) -> Vec<PairStats> {
    kind_pairs()
        .into_iter()
        .enumerate()
        .map(|(i, (ka, kb))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let pairs: Vec<_> = (0..reps)
                .map(|_| random_world_pair(&mut rng, ka, kb))
                .collect();
            let mut stats = PairStats {
                kind_a: ka,
                kind_b: kb,
                runs: reps,
                min_steps: usize::MAX,
                max_steps: 0,
                mean_steps: 0.0,
                mean_micros: 0.0,
                converged: 0,
            };
            let start = Instant::now();
            for (a, b) in &pairs {
                let r =
                    solve_inner(a, b, settings, None).expect("inner Hessian is positive definite");
                stats.min_steps = stats.min_steps.min(r.newton_steps);
                stats.max_steps = stats.max_steps.max(r.newton_steps);
                stats.mean_steps += r.newton_steps as f64;
                stats.converged += r.converged as usize;
            }
            let elapsed = start.elapsed().as_secs_f64();
            if reps > 0 {
                stats.mean_steps /= reps as f64;
                stats.mean_micros = elapsed * 1e6 / reps as f64;
            } else {
                stats.min_steps = 0;
            }
            stats
        })
        .collect()
}

/// How a unit cube is represented in the primitive-count study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxFamily {
    Box,
    Spheres,
    Capsules,
}

impl ApproxFamily {
    pub fn name(self) -> &'static str {
        match self {
            ApproxFamily::Box => "box",
            ApproxFamily::Spheres => "spheres",
            ApproxFamily::Capsules => "capsules",
        }
    }
}

/// Margin of the single-box representation; its core shrinks by the same amount so the
/// rounded box fits the cube's faces.
pub const BOX_APPROX_MARGIN: f64 = 0.02;

/// Axis-aligned cell as (center, half extents).
type Cell = ([f64; 3], [f64; 3]);

/// Splits the cube `[-0.5, 0.5]³` into `count` cells by repeatedly halving the cell with the
/// largest extent along one of `axes`.
fn split_cube(count: usize, axes: &[usize]) -> Vec<Cell> {
    let mut cells: Vec<Cell> = vec![([0.0; 3], [0.5; 3])];
    while cells.len() < count {
        let mut pick = (0, axes[0], f64::NEG_INFINITY);
        for (i, (_, half)) in cells.iter().enumerate() {
            for &a in axes {
                if half[a] > pick.2 {
                    pick = (i, a, half[a]);
                }
            }
        }
        let (i, axis, _) = pick;
        let (center, mut half) = cells.remove(i);
        half[axis] *= 0.5;
        for sign in [1.0, -1.0] {
            let mut c = center;
            c[axis] += sign * half[axis];
            cells.insert(i, (c, half));
        }
    }
    cells
}

/// Primitives covering the unit cube centered at the origin. Spheres circumscribe cells of
/// a recursive split; capsules run along x through cells split in y and z only.
pub fn unit_box_approximation(family: ApproxFamily, count: usize) -> Result<Vec<Primitive>> {
    if count == 0 {
        return Err(Error::Semantic(
            "an approximation needs at least one primitive".into(),
        ));
    }
    match family {
        ApproxFamily::Box => {
            let side = 1.0 - 2.0 * BOX_APPROX_MARGIN;
            let corner = -0.5 * side;
            Ok(vec![Primitive::cuboid(
                Point3::new(corner, corner, corner),
                Vector3::new(side, 0.0, 0.0),
                Vector3::new(0.0, side, 0.0),
                Vector3::new(0.0, 0.0, side),
                BOX_APPROX_MARGIN,
            )?])
        }
        ApproxFamily::Spheres => split_cube(count, &[0, 1, 2])
            .into_iter()
            .map(|(c, h)| Primitive::sphere(Point3::from(c), Vector3::from(h).norm()))
            .collect(),
        ApproxFamily::Capsules => split_cube(count, &[1, 2])
            .into_iter()
            .map(|(c, h)| {
                let start = Point3::new(c[0] - h[0], c[1], c[2]);
                Primitive::capsule(
                    start,
                    Vector3::new(2.0 * h[0], 0.0, 0.0),
                    (h[1] * h[1] + h[2] * h[2]).sqrt(),
                )
            })
            .collect(),
    }
}

fn distance_to_unit_box(p: &Point3<f64>) -> f64 {
    p.coords.map(|c| (c.abs() - 0.5).max(0.0)).norm()
}

/// Nearly uniform unit directions on a Fibonacci lattice.
fn fibonacci_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Hausdorff distance between the unit cube and the union of the dilated primitives,
/// estimated by sampling the cube's surface and the primitives' dilated shells.
pub fn hausdorff_to_unit_box(primitives: &[Primitive]) -> f64 {
    const GRID: usize = 16;
    let world: Vec<WorldPrimitive> = primitives
        .iter()
        .map(|p| p.place(&Pose::identity()))
        .collect();
    let directions = fibonacci_directions(256);
    let mut worst: f64 = 0.0;

    // primitives to cube: core points pushed out by the margin in every direction
    for p in &world {
        let l = p.dim();
        let per_axis: usize = if l == 0 { 1 } else { 9 };
        for code in 0..per_axis.pow(l as u32) {
            let mut c = code;
            let t: Vec<f64> = (0..l)
                .map(|_| {
                    let k = c % per_axis;
                    c /= per_axis;
                    k as f64 / (per_axis - 1) as f64
                })
                .collect();
            let core = p.point_on(&t).expect("t sized by the primitive");
            for d in &directions {
                worst = worst.max(distance_to_unit_box(&(core + d * p.margin)));
            }
        }
    }

    // cube surface to primitives
    for axis in 0..3 {
        for side in [-0.5, 0.5] {
            for i in 0..=GRID {
                for j in 0..=GRID {
                    let mut q = [0.0; 3];
                    q[axis] = side;
                    q[(axis + 1) % 3] = i as f64 / GRID as f64 - 0.5;
                    q[(axis + 2) % 3] = j as f64 / GRID as f64 - 0.5;
                    let point = Primitive::sphere(Point3::from(q), 1.0)
                        .expect("unit radius is valid")
                        .place(&Pose::identity());
                    let gap = world
                        .iter()
                        .map(|p| (exact_distance(&point, p).sqrt() - p.margin).max(0.0))
                        .fold(f64::INFINITY, f64::min);
                    worst = worst.max(gap);
                }
            }
        }
    }
    worst
}

/// Lateral offset of each body's lane. The faces are 0.8 m apart, more than any
/// approximation bulges sideways, so no pair is ever penalized.
pub const APPROX_LANE: f64 = 0.9;

/// Broad-phase slack of the study scene, wide enough that every pair is evaluated.
pub const APPROX_SLACK: f64 = 4.0;

/// Two bodies built from `primitives` travelling 2 m side by side along x without contact.
/// Every candidate pair is solved at every step, so the per-iteration work differs between
/// approximations only through the number of pairs.
pub fn approx_plan_scene(primitives: Vec<Primitive>, steps: usize) -> Result<Scene> {
    let body = |name: &str, y: f64| -> Result<RobotEntry> {
        let prims = primitives
            .iter()
            .cloned()
            .map(|p| p.attached_to(Attachment::Link(0)))
            .collect();
        Ok(RobotEntry {
            model: RobotModel::free_body(name, prims)?,
            initial: RobotState::new(Pose::from_translation(-1.0, y, 0.0), vec![]),
            fixed_base: false,
        })
    };
    let robots = vec![body("a", APPROX_LANE)?, body("b", -APPROX_LANE)?];
    let target = |robot: usize, y: f64| StateTarget {
        step: steps,
        robot,
        value: vec![1.0, y, 0.0, 0.0, 0.0, 0.0],
        weight: 1.0,
    };
    let objectives = Objectives {
        state_targets: vec![target(0, APPROX_LANE), target(1, -APPROX_LANE)],
        ee_targets: vec![],
    };
    let settings = OuterSettings {
        broad_phase_slack: APPROX_SLACK,
        ..OuterSettings::default()
    };
    Scene::new(
        robots,
        vec![],
        objectives,
        Horizon { steps, h: 0.1 },
        Weights::default(),
        settings,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxRow {
    pub family: ApproxFamily,
    pub count: usize,
    /// Candidate collision pairs between the two bodies.
    pub pairs: usize,
    /// Pairs surviving the broad phase, summed over the steps of the initial trajectory.
    pub evaluated_pairs: usize,
    /// Smallest clearance over the initial trajectory. Positive means no pair is penalized.
    pub min_clearance: f64,
    pub hausdorff: f64,
    /// Work of one outer iteration at the initial trajectory: objective, gradient and
    /// Hessian assembly plus the damped banded factorization and solve.
    pub micros_per_iteration: f64,
}

fn iteration_micros(scene: &Scene, traj: &Trajectory) -> Result<f64> {
    let start = Instant::now();
    let mut asm = objective(scene, traj)?;
    asm.hess.add_diagonal(scene.settings().damping_initial);
    if let Some(chol) = asm.hess.cholesky() {
        std::hint::black_box(chol.solve(&asm.grad));
    }
    Ok(start.elapsed().as_secs_f64() * 1e6)
}

/// Hausdorff error and per-iteration planning cost of the single box and of
/// `1..=max_count` spheres and capsules, on one thread. Repetitions sweep all
/// configurations in turn and each configuration keeps its fastest time.
pub fn approx_study(max_count: usize, reps: usize, steps: usize) -> Result<Vec<ApproxRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("a one-thread pool can always be built");
    let mut configs = vec![(ApproxFamily::Box, 1)];
    for family in [ApproxFamily::Spheres, ApproxFamily::Capsules] {
        configs.extend((1..=max_count).map(|k| (family, k)));
    }
    pool.install(|| {
        let mut rows = Vec::with_capacity(configs.len());
        let mut scenes = Vec::with_capacity(configs.len());
        for (family, count) in configs {
            let primitives = unit_box_approximation(family, count)?;
            let hausdorff = hausdorff_to_unit_box(&primitives);
            let scene = approx_plan_scene(primitives, steps)?;
            let initial = scene.initial_trajectory();
            let mut evaluated_pairs = 0;
            for i in 0..initial.steps() {
                evaluated_pairs += broad_phase(&scene, &initial, i, APPROX_SLACK)?.len();
            }
            let min_clearance = clearance_profile(&scene, &initial)?
                .into_iter()
                .flatten()
                .fold(f64::INFINITY, f64::min);
            rows.push(ApproxRow {
                family,
                count,
                pairs: scene.candidate_pairs().len(),
                evaluated_pairs,
                min_clearance,
                hausdorff,
                micros_per_iteration: f64::INFINITY,
            });
            scenes.push((scene, initial));
        }
        for _ in 0..reps.max(1) {
            for (row, (scene, initial)) in rows.iter_mut().zip(&scenes) {
                row.micros_per_iteration = row
                    .micros_per_iteration
                    .min(iteration_micros(scene, initial)?);
            }
        }
        Ok(rows)
    })
}
