//! Analytic derivatives against central finite differences.
//!
//! Four quantities are audited: the inner gradient `∂U/∂t`, the sensitivity `dt/dx`, the
//! distance gradient `dD/dx` (inner problem re-solved at every perturbation) and the
//! gradient of the full trajectory objective. Errors are normwise,
//! `max |analytic − fd| / max(max |fd|, floor)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::distance::{eval_u, solve_inner, InnerSettings};
use crate::error::{Error, Result};
use crate::sensitivity::{pair_derivatives, MovingPrimitive};
use crate::trajopt::{objective, objective_value, pair_space, Scene, StepGeometry, Trajectory};

/// Below this magnitude the reference value is treated as zero and errors are absolute.
pub const ERROR_FLOOR: f64 = 1e-6;

/// Inner settings used around finite differences: tight enough that re-solve noise stays
/// far below the perturbation.
pub const FD_INNER: InnerSettings = InnerSettings {
    w_r: 1e-4,
    w_c: 1e4,
    grad_tol: 1e-11,
    max_iters: 100,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    InnerGradient,
    Sensitivity,
    DistanceGradient,
    Pipeline,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Quantity::InnerGradient,
        Quantity::Sensitivity,
        Quantity::DistanceGradient,
        Quantity::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::InnerGradient => "inner gradient",
            Quantity::Sensitivity => "sensitivity",
            Quantity::DistanceGradient => "distance gradient",
            Quantity::Pipeline => "pipeline gradient",
        }
    }
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(ERROR_FLOOR, |m, r| m.max(r.abs()));
    let diff = analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, r)| m.max((a - r).abs()));
    diff / scale
}

/// Errors of one primitive pair; the `t` quantities are `None` without parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PairErrors {
    pub inner_gradient: Option<f64>,
    pub sensitivity: Option<f64>,
    pub distance_gradient: f64,
    pub newton_steps: usize,
}

fn converged_solve(
    a: &MovingPrimitive,
    b: &MovingPrimitive,
    settings: &InnerSettings,
    warm: Option<&[f64]>,
) -> Result<crate::distance::ProximityResult> {
    let r = solve_inner(&a.world, &b.world, settings, warm)?;
    if !r.converged {
        return Err(Error::NotConverged {
            grad_norm: r.grad_norm,
            steps: r.newton_steps,
        });
    }
    Ok(r)
}

/// Audits one pair whose primitives `build(x)` depend on `x`. The inner gradient is probed at
/// `t_probe`, which should keep clear of the barrier kinks at 0 and 1. `corrupt` flips the
/// sign of one analytic quantity.
pub fn pair_errors<F>(
    build: F,
    x: &[f64],
    t_probe: &[f64],
    settings: &InnerSettings,
    step: f64,
    corrupt: Option<Quantity>,
) -> Result<PairErrors>
where
    F: Fn(&[f64]) -> (MovingPrimitive, MovingPrimitive),
{
    let sign = |q: Quantity| if corrupt == Some(q) { -1.0 } else { 1.0 };
    let (a, b) = build(x);
    let m = a.world.dim() + b.world.dim();
    let result = converged_solve(&a, &b, settings, None)?;

    let inner_gradient = if m == 0 {
        None
    } else {
        let analytic =
            eval_u(&a.world, &b.world, t_probe, settings)?.grad * sign(Quantity::InnerGradient);
        let mut fd = vec![0.0; m];
        let mut t = t_probe.to_vec();
        let h = 1e-6;
        for l in 0..m {
            t[l] = t_probe[l] + h;
            let up = eval_u(&a.world, &b.world, &t, settings)?.value;
            t[l] = t_probe[l] - h;
            let down = eval_u(&a.world, &b.world, &t, settings)?.value;
            t[l] = t_probe[l];
            fd[l] = (up - down) / (2.0 * h);
        }
        Some(relative_error(analytic.as_slice(), &fd))
    };

    let derivs = pair_derivatives(&a, &b, &result, settings)?;
    let n = x.len();
    let mut fd_t = DMatrix::zeros(m, n);
    let mut fd_d = DVector::zeros(n);
    let mut probe = x.to_vec();
    let warm = result.t_star.as_slice();
    for k in 0..n {
        probe[k] = x[k] + step;
        let (ua, ub) = build(&probe);
        let up = converged_solve(&ua, &ub, settings, Some(warm))?;
        probe[k] = x[k] - step;
        let (da, db) = build(&probe);
        let down = converged_solve(&da, &db, settings, Some(warm))?;
        probe[k] = x[k];
        fd_t.set_column(k, &((&up.t_star - &down.t_star) / (2.0 * step)));
        fd_d[k] = (up.d_sq - down.d_sq) / (2.0 * step);
    }
    let sensitivity = (m > 0).then(|| {
        let analytic = &derivs.dt_dx * sign(Quantity::Sensitivity);
        relative_error(analytic.as_slice(), fd_t.as_slice())
    });
    let analytic = &derivs.grad_x * sign(Quantity::DistanceGradient);
    Ok(PairErrors {
        inner_gradient,
        sensitivity,
        distance_gradient: relative_error(analytic.as_slice(), fd_d.as_slice()),
        newton_steps: result.newton_steps,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    /// Number of perturbed trajectories.
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Half-width of the uniform perturbation applied to every free coordinate.
    pub spread: f64,
    /// Central-difference step in state units.
    pub fd_step: f64,
    /// Objective coordinates differenced per sample.
    pub pipeline_coords: usize,
    pub corrupt: Option<Quantity>,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            samples: 4,
            seed: 0,
            tol: 1e-3,
            spread: 0.05,
            fd_step: 1e-6,
            pipeline_coords: 24,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantityReport {
    pub quantity: Quantity,
    pub checks: usize,
    /// Largest relative error over all checks.
    pub worst: Option<f64>,
    /// Where the worst error occurred.
    pub worst_at: Option<String>,
    pub skipped: Option<String>,
}

impl QuantityReport {
    fn new(quantity: Quantity) -> Self {
        Self {
            quantity,
            checks: 0,
            worst: None,
            worst_at: None,
            skipped: None,
        }
    }

    fn record(&mut self, error: f64, at: impl FnOnce() -> String) {
        self.checks += 1;
        if self.worst.is_none_or(|w| error > w || error.is_nan()) {
            self.worst = Some(error);
            self.worst_at = Some(at());
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.worst.is_none_or(|w| w <= tol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tol: f64,
    pub samples: usize,
    pub quantities: Vec<QuantityReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.quantities.iter().all(|q| q.passed(self.tol))
    }

    pub fn failures(&self) -> Vec<Quantity> {
        self.quantities
            .iter()
            .filter(|q| !q.passed(self.tol))
            .map(|q| q.quantity)
            .collect()
    }
}

/// Coordinates that are not pinned: everything after step 1 except fixed bases.
fn free_coordinates(scene: &Scene, steps: usize) -> Vec<usize> {
    let dim = scene.dim();
    let pinned: Vec<usize> = (0..scene.robots().len())
        .filter(|&r| scene.robots()[r].fixed_base)
        .flat_map(|r| scene.base_coords(r))
        .collect();
    (1..steps)
        .flat_map(|i| {
            (0..dim)
                .filter(|c| !pinned.contains(c))
                .map(move |c| i * dim + c)
        })
        .collect()
}

/// Audits every quantity on `settings.samples` random perturbations of the scene's initial
/// trajectory. Pair quantities use every candidate pair at one random step per sample.
pub fn gradcheck(scene: &Scene, settings: &GradcheckSettings) -> Result<GradcheckReport> {
    let mut tight = scene.clone();
    let mut outer = tight.settings();
    outer.inner_grad_tol = FD_INNER.grad_tol;
    outer.inner_max_iters = FD_INNER.max_iters;
    tight.set_settings(outer)?;
    let inner = tight.inner_settings();

    let mut reports: Vec<QuantityReport> = Quantity::ALL
        .iter()
        .map(|&q| QuantityReport::new(q))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let base = tight.initial_trajectory();
    let free = free_coordinates(&tight, base.steps());
    let pairs = tight.candidate_pairs();
    let mut any_parameters = false;

    for sample in 0..settings.samples {
        let mut data = base.as_slice().to_vec();
        for &c in &free {
            data[c] += rng.gen_range(-settings.spread..=settings.spread);
        }
        let traj = Trajectory::new(base.steps(), base.dim(), base.h(), data)?;
        let step = rng.gen_range(0..traj.steps());
        let row = traj.row(step).to_vec();
        let probes: Vec<Vec<f64>> = pairs
            .iter()
            .map(|p| {
                let m = tight.primitive(p.a).dim() + tight.primitive(p.b).dim();
                (0..m).map(|_| rng.gen_range(0.05..0.95)).collect()
            })
            .collect();

        let pair_results = pairs
            .par_iter()
            .zip(&probes)
            .map(|(pair, probe)| {
                let geometry = StepGeometry::new(&tight, &row);
                let (coords, _, _) = pair_space(&tight, &geometry, pair);
                let x: Vec<f64> = coords.iter().map(|&c| row[c]).collect();
                let build = |x: &[f64]| {
                    let mut r = row.clone();
                    for (&c, &v) in coords.iter().zip(x) {
                        r[c] = v;
                    }
                    let (_, a, b) = pair_space(&tight, &StepGeometry::new(&tight, &r), pair);
                    (a, b)
                };
                pair_errors(build, &x, probe, &inner, settings.fd_step, settings.corrupt).map_err(
                    |source| Error::PairSolve {
                        pair: format!(
                            "{}:{}",
                            tight.primitive_label(pair.a),
                            tight.primitive_label(pair.b)
                        ),
                        step: step + 1,
                        source: Box::new(source),
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        for (pair, errs) in pairs.iter().zip(pair_results) {
            let at = || {
                format!(
                    "sample {sample}, step {}, pair {}:{}",
                    step + 1,
                    tight.primitive_label(pair.a),
                    tight.primitive_label(pair.b)
                )
            };
            if let Some(e) = errs.inner_gradient {
                any_parameters = true;
                reports[0].record(e, at);
            }
            if let Some(e) = errs.sensitivity {
                reports[1].record(e, at);
            }
            reports[2].record(errs.distance_gradient, at);
        }

        let analytic = objective(&tight, &traj)?.grad;
        let chosen: Vec<usize> = free
            .choose_multiple(&mut rng, settings.pipeline_coords.min(free.len()))
            .copied()
            .collect();
        let fd = chosen
            .par_iter()
            .map(|&c| {
                let mut probe = traj.as_slice().to_vec();
                probe[c] += settings.fd_step;
                let up = objective_value(
                    &tight,
                    &Trajectory::new(traj.steps(), traj.dim(), traj.h(), probe.clone())?,
                )?;
                probe[c] -= 2.0 * settings.fd_step;
                let down = objective_value(
                    &tight,
                    &Trajectory::new(traj.steps(), traj.dim(), traj.h(), probe)?,
                )?;
                Ok((up - down) / (2.0 * settings.fd_step))
            })
            .collect::<Result<Vec<f64>>>()?;
        if !chosen.is_empty() {
            let sign = if settings.corrupt == Some(Quantity::Pipeline) {
                -1.0
            } else {
                1.0
            };
            let picked: Vec<f64> = chosen.iter().map(|&c| sign * analytic[c]).collect();
            reports[3].record(relative_error(&picked, &fd), || format!("sample {sample}"));
        }
    }

    if pairs.is_empty() {
        for r in &mut reports[..3] {
            r.skipped = Some("no collision pairs, skipped".into());
        }
    } else if !any_parameters {
        for r in &mut reports[..2] {
            r.skipped = Some("empty parameter space, skipped".into());
        }
    }
    if free.is_empty() {
        reports[3].skipped = Some("no free coordinates, skipped".into());
    }
    Ok(GradcheckReport {
        seed: settings.seed,
        tol: settings.tol,
        samples: settings.samples,
        quantities: reports,
    })
}
