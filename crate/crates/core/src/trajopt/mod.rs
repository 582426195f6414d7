//! Multi-robot trajectory optimization.
//!
//! The variable is every robot state at every step, flattened step by step. The objective
//! sums smoothness, goal terms, soft limit penalties and soft collision penalties; it is
//! minimized with a damped Newton method and backtracking line search. All terms couple a
//! step only with the two steps before it, so the Hessian is banded.

mod banded;
mod collision;
mod scene;
mod terms;
mod validate;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

pub use banded::{BandedCholesky, BandedMatrix};
pub use collision::{broad_phase, collision_penalty, PairProximity, StepGeometry, WarmStarts};
pub use scene::{
    CollisionHessian, EeTarget, Horizon, Objectives, Obstacle, OuterSettings, PrimitivePair,
    PrimitiveRef, RobotEntry, Scene, StateTarget, Trajectory, Weights,
};
pub use terms::{goal_terms, limit_penalty, smoothness_term, trajectory_bandwidth, Assembly};
pub use validate::{validate, ClearanceRecord, LimitViolation, ValidationReport};

pub(crate) use collision::pair_space;
use collision::{evaluate_step, step_derivatives, StepEvaluation};

/// Objective value at one trajectory, with the inner solutions it was computed from.
#[derive(Clone, Debug)]
struct Evaluation {
    value: f64,
    steps: Vec<StepEvaluation>,
    max_violation: f64,
}

impl Evaluation {
    fn active_pairs(&self) -> usize {
        self.steps.iter().map(|s| s.pairs.len()).sum()
    }

    fn warm_starts(&self) -> WarmStarts {
        self.steps
            .iter()
            .map(|s| {
                s.pairs
                    .iter()
                    .map(|p| (p.pair, p.result.t_star.clone()))
                    .collect()
            })
            .collect()
    }
}

/// Total objective at `traj`; the broad phase is rerun here so culled pairs are exactly
/// those whose penalty is zero.
fn evaluate(scene: &Scene, traj: &Trajectory, warm: &WarmStarts) -> Result<Evaluation> {
    let steps = (0..traj.steps())
        .into_par_iter()
        .map(|i| evaluate_step(scene, traj.row(i), i, None, warm.get(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut asm = Assembly::value_only();
    terms::add_smoothness(&mut asm, traj, scene.weights().w_s);
    terms::add_goals(&mut asm, scene, traj);
    let mut max_violation = terms::add_limits(&mut asm, scene, traj);
    let mut value = asm.value;
    for s in &steps {
        value += s.value;
        for p in &s.pairs {
            max_violation = max_violation.max(-p.clearance());
        }
    }
    Ok(Evaluation {
        value,
        steps,
        max_violation,
    })
}

fn assemble(scene: &Scene, traj: &Trajectory, eval: &Evaluation) -> Result<Assembly> {
    let mut asm = Assembly::zeros(traj);
    terms::add_smoothness(&mut asm, traj, scene.weights().w_s);
    terms::add_goals(&mut asm, scene, traj);
    terms::add_limits(&mut asm, scene, traj);
    let blocks = eval
        .steps
        .par_iter()
        .enumerate()
        .map(|(i, s)| step_derivatives(scene, traj, i, s))
        .collect::<Result<Vec<_>>>()?;
    for (indices, grad, hess) in blocks.into_iter().flatten() {
        asm.add_block(&indices, &grad, &hess);
    }
    asm.value = eval.value;
    Ok(asm)
}

/// Value of the full objective at `traj`, without warm starts.
pub fn objective_value(scene: &Scene, traj: &Trajectory) -> Result<f64> {
    scene.check_trajectory(traj)?;
    Ok(evaluate(scene, traj, &Vec::new())?.value)
}

/// Value, gradient and Hessian of the full objective at `traj`, without warm starts.
pub fn objective(scene: &Scene, traj: &Trajectory) -> Result<Assembly> {
    scene.check_trajectory(traj)?;
    let eval = evaluate(scene, traj, &Vec::new())?;
    assemble(scene, traj, &eval)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Largest gradient entry below `grad_tol`.
    GradientTolerance,
    /// Predicted decrease of the Newton step negligible relative to the objective.
    Stationary,
    IterationLimit,
    /// No damping up to `damping_max` produced an acceptable step.
    DampingLimit,
}

impl SolveStatus {
    pub fn converged(self) -> bool {
        matches!(self, Self::GradientTolerance | Self::Stationary)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective after the step.
    pub objective: f64,
    /// Largest gradient entry before the step.
    pub grad_inf_norm: f64,
    /// Largest limit violation or negative clearance after the step (0 when feasible).
    pub max_violation: f64,
    pub damping: f64,
    pub step_size: f64,
    pub active_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Objective at the initial trajectory followed by the value after every accepted step.
    pub objective_history: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub final_objective: f64,
    pub final_grad_inf_norm: f64,
    pub max_violation: f64,
    /// Smallest clearance over all candidate pairs at each step, `None` without pairs.
    pub min_clearance: Vec<Option<f64>>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status.converged()
    }
}

/// Smallest `‖P_a − P_b‖ − (r_a + r_b)` over all candidate pairs at every step.
pub fn clearance_profile(scene: &Scene, traj: &Trajectory) -> Result<Vec<Option<f64>>> {
    scene.check_trajectory(traj)?;
    (0..traj.steps())
        .into_par_iter()
        .map(|i| {
            let s = evaluate_step(scene, traj.row(i), i, Some(scene.candidate_pairs()), None)?;
            Ok(s.pairs
                .iter()
                .map(PairProximity::clearance)
                .reduce(f64::min))
        })
        .collect()
}

fn inf_norm(v: &nalgebra::DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Minimizes the objective from `initial` (or [`Scene::initial_trajectory`]).
///
/// Each iteration factors `H + λI`, growing `λ` until the factorization succeeds and the
/// backtracking line search finds a step with sufficient decrease; `λ` shrinks again after
/// every accepted step. Accepted steps never increase the objective.
pub fn solve(scene: &Scene, initial: Option<Trajectory>) -> Result<(Trajectory, SolveReport)> {
    let settings = scene.settings();
    let mut traj = initial.unwrap_or_else(|| scene.initial_trajectory());
    scene.check_trajectory(&traj)?;

    let mut eval = evaluate(scene, &traj, &Vec::new())?;
    let mut warm = eval.warm_starts();
    let mut history = vec![eval.value];
    let mut records = Vec::new();
    let mut damping = settings.damping_initial;
    let mut status = SolveStatus::IterationLimit;
    let mut grad_norm;

    let mut iteration = 0;
    loop {
        let asm = assemble(scene, &traj, &eval)?;
        grad_norm = inf_norm(&asm.grad);
        if grad_norm <= settings.grad_tol {
            status = SolveStatus::GradientTolerance;
            break;
        }
        if iteration >= settings.max_outer_iters {
            break;
        }
        let x = traj.as_slice();
        let mut first_attempt = true;
        let accepted = loop {
            if damping > settings.damping_max {
                break None;
            }
            let mut damped = asm.hess.clone();
            damped.add_diagonal(damping);
            let Some(chol) = damped.cholesky() else {
                damping *= settings.damping_growth;
                first_attempt = false;
                continue;
            };
            let direction = -chol.solve(&asm.grad);
            let slope = asm.grad.dot(&direction);
            if first_attempt && -slope <= settings.stall_tol * eval.value.abs().max(1.0) {
                status = SolveStatus::Stationary;
                break None;
            }
            first_attempt = false;
            let mut alpha = settings.initial_step;
            let mut found = None;
            for _ in 0..=settings.max_halvings {
                let data: Vec<f64> = x
                    .iter()
                    .zip(direction.iter())
                    .map(|(a, d)| a + alpha * d)
                    .collect();
                let trial = traj.with_data(data);
                let trial_eval = evaluate(scene, &trial, &warm)?;
                if trial_eval.value <= eval.value + settings.armijo * alpha * slope {
                    found = Some((trial, trial_eval, alpha));
                    break;
                }
                alpha *= settings.backtrack;
            }
            match found {
                Some(step) => break Some(step),
                None => damping *= settings.damping_growth,
            }
        };
        let Some((next, next_eval, alpha)) = accepted else {
            if status != SolveStatus::Stationary {
                status = SolveStatus::DampingLimit;
            }
            break;
        };
        iteration += 1;
        records.push(IterationRecord {
            iteration,
            objective: next_eval.value,
            grad_inf_norm: grad_norm,
            max_violation: next_eval.max_violation,
            damping,
            step_size: alpha,
            active_pairs: next_eval.active_pairs(),
        });
        history.push(next_eval.value);
        traj = next;
        eval = next_eval;
        warm = eval.warm_starts();
        damping = (damping / settings.damping_growth).max(settings.damping_min);
    }

    let min_clearance = clearance_profile(scene, &traj)?;
    let report = SolveReport {
        status,
        iterations: iteration,
        objective_history: history,
        records,
        final_objective: eval.value,
        final_grad_inf_norm: grad_norm,
        max_violation: eval.max_violation,
        min_clearance,
    };
    Ok((traj, report))
}
