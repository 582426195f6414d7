//! Objective terms that do not involve collision geometry.

use nalgebra::{DMatrix, DVector};

use crate::distance::{barrier_minus_derivatives, barrier_plus_derivatives};
use crate::error::Result;
use crate::kinematics::LimitOrder;

use super::banded::BandedMatrix;
use super::scene::{local_point, Scene, Trajectory};

/// Value, gradient and (banded) Hessian of an objective over a flattened trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembly {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: BandedMatrix,
    derivatives: bool,
}

/// Band half-width of any Hessian built from the terms: a step couples with the two before it.
pub fn trajectory_bandwidth(traj: &Trajectory) -> usize {
    (3 * traj.dim()).saturating_sub(1)
}

impl Assembly {
    pub fn zeros(traj: &Trajectory) -> Self {
        let n = traj.as_slice().len();
        Self {
            value: 0.0,
            grad: DVector::zeros(n),
            hess: BandedMatrix::zeros(n, trajectory_bandwidth(traj)),
            derivatives: true,
        }
    }

    pub(crate) fn value_only() -> Self {
        Self {
            value: 0.0,
            grad: DVector::zeros(0),
            hess: BandedMatrix::zeros(0, 0),
            derivatives: false,
        }
    }

    pub(crate) fn wants_derivatives(&self) -> bool {
        self.derivatives
    }

    pub(crate) fn add_grad(&mut self, i: usize, v: f64) {
        if self.derivatives {
            self.grad[i] += v;
        }
    }

    pub(crate) fn add_hess(&mut self, i: usize, j: usize, v: f64) {
        if self.derivatives {
            self.hess.add(i, j, v);
        }
    }

    /// Adds `w · f(x)` for `f` linear in the listed coordinates: `f = Σ c_k x_{idx_k}`, using
    /// `f`'s scalar derivatives `(g, h)` of the outer function.
    fn add_linear_composite(&mut self, coeffs: &[(usize, f64)], g: f64, h: f64) {
        if !self.derivatives {
            return;
        }
        for &(i, ci) in coeffs {
            self.grad[i] += g * ci;
            for &(j, cj) in coeffs {
                if i >= j && h != 0.0 {
                    // off-diagonal pairs appear twice in the double loop but are stored once
                    self.hess.add(i, j, h * ci * cj);
                }
            }
        }
    }

    pub(crate) fn add_block(
        &mut self,
        indices: &[usize],
        grad: &DVector<f64>,
        hess: &DMatrix<f64>,
    ) {
        if !self.derivatives {
            return;
        }
        for (p, &i) in indices.iter().enumerate() {
            self.grad[i] += grad[p];
        }
        self.hess.add_block(indices, hess);
    }
}

/// `w_s Σ_i ||(x_i − 2 x_{i−1} + x_{i−2}) / h²||²` over steps 3..N.
pub fn smoothness_term(traj: &Trajectory, w_s: f64) -> Assembly {
    let mut out = Assembly::zeros(traj);
    add_smoothness(&mut out, traj, w_s);
    out
}

pub(crate) fn add_smoothness(out: &mut Assembly, traj: &Trajectory, w_s: f64) {
    if w_s == 0.0 {
        return;
    }
    let inv = 1.0 / (traj.h() * traj.h());
    let stencil = LimitOrder::Acceleration.stencil();
    for i in 2..traj.steps() {
        for k in 0..traj.dim() {
            let coeffs: Vec<(usize, f64)> = stencil
                .iter()
                .enumerate()
                .map(|(j, c)| (traj.index(i - j, k), c * inv))
                .collect();
            let a: f64 = coeffs
                .iter()
                .map(|&(idx, c)| c * traj.as_slice()[idx])
                .sum();
            out.value += w_s * a * a;
            out.add_linear_composite(&coeffs, 2.0 * w_s * a, 2.0 * w_s);
        }
    }
}

/// State targets, end-effector targets, and the pins holding step 1 (and fixed bases) at
/// the initial state. End-effector terms use the Gauss-Newton Hessian `2w JᵀJ`.
pub fn goal_terms(scene: &Scene, traj: &Trajectory) -> Result<Assembly> {
    scene.check_trajectory(traj)?;
    let mut out = Assembly::zeros(traj);
    add_goals(&mut out, scene, traj);
    Ok(out)
}

fn add_squared_residual(out: &mut Assembly, index: usize, residual: f64, weight: f64) {
    out.value += weight * residual * residual;
    out.add_grad(index, 2.0 * weight * residual);
    out.add_hess(index, index, 2.0 * weight);
}

pub(crate) fn add_goals(out: &mut Assembly, scene: &Scene, traj: &Trajectory) {
    let x = traj.as_slice();
    let pin = scene.settings().pin_weight;
    if pin > 0.0 {
        let initial = scene.initial_state();
        for (k, v) in initial.iter().enumerate() {
            add_squared_residual(out, k, x[k] - v, pin);
        }
        for (r, entry) in scene.robots().iter().enumerate() {
            if !entry.fixed_base {
                continue;
            }
            for i in 1..traj.steps() {
                for k in scene.base_coords(r) {
                    let idx = traj.index(i, k);
                    add_squared_residual(out, idx, x[idx] - initial[k], pin);
                }
            }
        }
    }

    for t in &scene.objectives().state_targets {
        let o = scene.robot_offset(t.robot);
        for (k, v) in t.value.iter().enumerate() {
            let idx = traj.index(t.step - 1, o + k);
            add_squared_residual(out, idx, x[idx] - v, t.weight);
        }
    }

    for t in &scene.objectives().ee_targets {
        let model = &scene.robots()[t.robot].model;
        let state = scene.robot_state(traj.row(t.step - 1), t.robot);
        let frames = model
            .link_frames(&state)
            .expect("trajectory dimension checked");
        let local = local_point(t.local);
        let p = frames.frames[t.link].transform_point(&local);
        let residual = p - local_point(t.target);
        out.value += t.weight * residual.norm_squared();
        if out.wants_derivatives() {
            let jac = model.point_jacobian(&frames, t.link, &local, model.dim(), 0);
            let grad = jac.tr_mul(&residual) * (2.0 * t.weight);
            let hess = jac.tr_mul(&jac) * (2.0 * t.weight);
            let base = traj.index(t.step - 1, scene.robot_offset(t.robot));
            let indices: Vec<usize> = (base..base + model.dim()).collect();
            out.add_block(
                &indices,
                &DVector::from_column_slice(grad.as_slice()),
                &hess,
            );
        }
    }
}

/// `limit_weight Σ (S⁺_upper(v) + S⁻_lower(v))` over every bounded position, velocity and
/// acceleration value of every robot and step.
pub fn limit_penalty(scene: &Scene, traj: &Trajectory) -> Result<Assembly> {
    scene.check_trajectory(traj)?;
    let mut out = Assembly::zeros(traj);
    add_limits(&mut out, scene, traj);
    Ok(out)
}

/// Adds the limit penalty and returns the largest bound violation.
pub(crate) fn add_limits(out: &mut Assembly, scene: &Scene, traj: &Trajectory) -> f64 {
    let weight = scene.weights().limit_weight;
    let h = traj.h();
    let mut worst: f64 = 0.0;
    for (r, entry) in scene.robots().iter().enumerate() {
        let o = scene.robot_offset(r);
        let d = entry.model.dim();
        let rows: Vec<&[f64]> = (0..traj.steps()).map(|i| &traj.row(i)[o..o + d]).collect();
        for i in 0..traj.steps() {
            for lv in entry.model.limit_values(&rows, i, h) {
                let (mut value, mut g, mut hh) = (0.0, 0.0, 0.0);
                if let Some(u) = lv.upper {
                    let (gu, hu) = barrier_plus_derivatives(lv.value, u);
                    value += crate::distance::barrier_plus(lv.value, u);
                    g += gu;
                    hh += hu;
                    worst = worst.max(lv.value - u);
                }
                if let Some(l) = lv.lower {
                    let (gl, hl) = barrier_minus_derivatives(lv.value, l);
                    value += crate::distance::barrier_minus(lv.value, l);
                    g += gl;
                    hh += hl;
                    worst = worst.max(l - lv.value);
                }
                if value == 0.0 && g == 0.0 {
                    continue;
                }
                out.value += weight * value;
                let scale = lv.order.scale(h);
                let coeffs: Vec<(usize, f64)> = lv
                    .order
                    .stencil()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (traj.index(i - j, o + lv.coord), c * scale))
                    .collect();
                out.add_linear_composite(&coeffs, weight * g, weight * hh);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::kinematics::{Joint, LimitSpec, RobotModel, RobotState};
    use crate::primitives::{Attachment, Primitive};
    use crate::trajopt::scene::{
        EeTarget, Horizon, Objectives, OuterSettings, RobotEntry, StateTarget, Weights,
    };
    use approx::assert_relative_eq;
    use nalgebra::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_scene(steps: usize, objectives: Objectives, pin_weight: f64) -> Scene {
        let model = RobotModel::free_body(
            "ball",
            vec![Primitive::sphere(Point3::origin(), 0.25)
                .unwrap()
                .attached_to(Attachment::Link(0))],
        )
        .unwrap();
        let settings = OuterSettings {
            pin_weight,
            ..Default::default()
        };
        Scene::new(
            vec![RobotEntry {
                model,
                initial: RobotState::new(Pose::identity(), vec![]),
                fixed_base: false,
            }],
            vec![],
            objectives,
            Horizon { steps, h: 0.1 },
            Weights::default(),
            settings,
        )
        .unwrap()
    }

    fn arm_scene(limits: LimitSpec) -> Scene {
        let joint = |parent: usize, z: f64, axis: Vector3<f64>| Joint {
            parent,
            offset: Pose::from_translation(0.0, 0.0, z),
            axis,
            limits,
        };
        let model = RobotModel::new(
            "arm",
            vec![
                joint(0, 0.1, Vector3::z()),
                joint(1, 0.3, Vector3::y()),
                joint(2, 0.3, Vector3::y()),
            ],
            Default::default(),
            vec![],
        )
        .unwrap();
        let objectives = Objectives {
            state_targets: vec![],
            ee_targets: vec![EeTarget {
                step: 3,
                robot: 0,
                link: 3,
                local: [0.0, 0.0, 0.2],
                target: [0.2, 0.1, 0.6],
                weight: 2.0,
            }],
        };
        Scene::new(
            vec![RobotEntry {
                model,
                initial: RobotState::new(Pose::identity(), vec![0.0; 3]),
                fixed_base: true,
            }],
            vec![],
            objectives,
            Horizon { steps: 4, h: 0.1 },
            Weights::default(),
            OuterSettings {
                pin_weight: 3.0,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn random_traj(rng: &mut impl Rng, steps: usize, dim: usize, spread: f64) -> Trajectory {
        let data = (0..steps * dim)
            .map(|_| rng.gen_range(-spread..spread))
            .collect();
        Trajectory::new(steps, dim, 0.1, data).unwrap()
    }

    /// Central differences of `f` checked against the assembled gradient and Hessian.
    fn check_derivatives(traj: &Trajectory, f: impl Fn(&Trajectory) -> Assembly, tol: f64) {
        let base = f(traj);
        let eps = 1e-6;
        let n = traj.as_slice().len();
        for i in 0..n {
            let shifted = |d: f64| {
                let mut data = traj.as_slice().to_vec();
                data[i] += d;
                f(&traj.with_data(data))
            };
            let (plus, minus) = (shifted(eps), shifted(-eps));
            let fd = (plus.value - minus.value) / (2.0 * eps);
            let scale = base.grad[i].abs().max(1.0);
            assert!(
                (fd - base.grad[i]).abs() <= tol * scale,
                "grad[{i}]: fd {fd} vs {}",
                base.grad[i]
            );
            for j in 0..n {
                let fd = (plus.grad[j] - minus.grad[j]) / (2.0 * eps);
                let h = base.hess.get(i, j);
                assert!(
                    (fd - h).abs() <= tol * h.abs().max(1.0),
                    "hess[{i},{j}]: fd {fd} vs {h}"
                );
            }
        }
    }

    #[test]
    fn smoothness_vanishes_on_linear_motion() {
        let rows: Vec<f64> = (0..5)
            .flat_map(|i| [i as f64 * 0.25, 1.0, -2.0 * i as f64])
            .collect();
        let traj = Trajectory::new(5, 3, 0.5, rows).unwrap();
        let s = smoothness_term(&traj, 0.1);
        assert_eq!(s.value, 0.0);
        assert!(s.grad.iter().all(|&g| g == 0.0));
        let constant = Trajectory::constant(&[1.0, 2.0], 4, 0.1);
        assert_eq!(smoothness_term(&constant, 0.1).value, 0.0);
    }

    #[test]
    fn single_kink_counts_three_stencils() {
        let mut traj = Trajectory::constant(&[0.0, 0.0], 7, 0.1);
        let d = 0.01;
        traj.row_mut(3)[1] = d;
        let w = 0.1;
        let expected = w * (d / 0.01f64).powi(2) * (1.0 + 4.0 + 1.0);
        assert_relative_eq!(
            smoothness_term(&traj, w).value,
            expected,
            max_relative = 1e-12
        );
        // the quadratic form xᵀ H x / 2 reproduces the value
        let s = smoothness_term(&traj, w);
        let x = DVector::from_column_slice(traj.as_slice());
        assert_relative_eq!(
            0.5 * x.dot(&s.hess.mul_vec(&x)),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn smoothness_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traj = random_traj(&mut rng, 5, 2, 1.0);
        check_derivatives(&traj, |t| smoothness_term(t, 0.1), 1e-5);
    }

    #[test]
    fn state_target_residual() {
        let mut value = vec![0.0; 6];
        value[0] = 1.0;
        let objectives = Objectives {
            state_targets: vec![StateTarget {
                step: 3,
                robot: 0,
                value,
                weight: 2.0,
            }],
            ee_targets: vec![],
        };
        let scene = sphere_scene(3, objectives, 0.0);
        let mut traj = Trajectory::constant(&[0.0; 6], 3, 0.1);
        let g = goal_terms(&scene, &traj).unwrap();
        assert_relative_eq!(g.value, 2.0);
        traj.row_mut(2)[0] = 1.0;
        assert_eq!(goal_terms(&scene, &traj).unwrap().value, 0.0);
    }

    #[test]
    fn pin_holds_first_step() {
        let scene = sphere_scene(2, Objectives::default(), 10.0);
        let mut traj = Trajectory::constant(&[0.0; 6], 2, 0.1);
        traj.row_mut(0)[2] = 0.5;
        traj.row_mut(1)[2] = 0.5;
        assert_relative_eq!(goal_terms(&scene, &traj).unwrap().value, 2.5);
    }

    #[test]
    fn ee_gradient_matches_differences() {
        let scene = arm_scene(LimitSpec::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = random_traj(&mut rng, 4, 9, 0.8);
        let g = goal_terms(&scene, &traj).unwrap();
        let eps = 1e-6;
        for i in 0..traj.as_slice().len() {
            let mut p = traj.as_slice().to_vec();
            let mut m = p.clone();
            p[i] += eps;
            m[i] -= eps;
            let fd = (goal_terms(&scene, &traj.with_data(p)).unwrap().value
                - goal_terms(&scene, &traj.with_data(m)).unwrap().value)
                / (2.0 * eps);
            assert!(
                (fd - g.grad[i]).abs() <= 1e-5 * g.grad[i].abs().max(1.0),
                "{i}: {fd} vs {}",
                g.grad[i]
            );
        }
    }

    #[test]
    fn ee_target_reached_gives_zero() {
        let mut scene = arm_scene(LimitSpec::default());
        let traj = Trajectory::constant(&[0.0; 9], 4, 0.1);
        let model = &scene.robots()[0].model;
        let p = model
            .forward_kinematics(
                &RobotState::from_slice(traj.row(2)),
                3,
                &Point3::new(0.0, 0.0, 0.2),
            )
            .unwrap();
        let objectives = Objectives {
            state_targets: vec![],
            ee_targets: vec![EeTarget {
                step: 3,
                robot: 0,
                link: 3,
                local: [0.0, 0.0, 0.2],
                target: [p.x, p.y, p.z],
                weight: 1.0,
            }],
        };
        scene = Scene::new(
            scene.robots().to_vec(),
            vec![],
            objectives,
            scene.horizon(),
            scene.weights(),
            scene.settings(),
        )
        .unwrap();
        assert_eq!(goal_terms(&scene, &traj).unwrap().value, 0.0);
    }

    #[test]
    fn limits_inside_bounds_are_free() {
        let limits = LimitSpec {
            lower: Some(-1.0),
            upper: Some(1.0),
            velocity: Some(2.0),
            acceleration: Some(10.0),
        };
        let scene = arm_scene(limits);
        let traj = Trajectory::constant(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.9], 4, 0.1);
        let l = limit_penalty(&scene, &traj).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn joint_over_upper_bound() {
        let limits = LimitSpec {
            lower: Some(-1.0),
            upper: Some(1.0),
            velocity: Some(2.0),
            acceleration: Some(10.0),
        };
        let scene = arm_scene(limits);
        let traj = Trajectory::constant(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.1, 0.0, 0.0], 1, 0.1);
        let scene = Scene::new(
            scene.robots().to_vec(),
            vec![],
            Objectives::default(),
            Horizon { steps: 1, h: 0.1 },
            scene.weights(),
            scene.settings(),
        )
        .unwrap();
        assert_relative_eq!(
            limit_penalty(&scene, &traj).unwrap().value,
            1e3 * 0.01,
            max_relative = 1e-9
        );
    }

    #[test]
    fn limit_derivatives_match_differences() {
        let limits = LimitSpec {
            lower: Some(-0.3),
            upper: Some(0.2),
            velocity: Some(1.0),
            acceleration: Some(20.0),
        };
        let scene = arm_scene(limits);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let traj = random_traj(&mut rng, 4, 9, 0.6);
            check_derivatives(&traj, |t| limit_penalty(&scene, t).unwrap(), 1e-4);
        }
    }
}
