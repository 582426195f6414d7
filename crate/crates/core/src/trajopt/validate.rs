//! Post-hoc audit of a trajectory with the exact distance oracle.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::kinematics::LimitOrder;
use crate::oracle::exact_distance;

use super::collision::StepGeometry;
use super::scene::{Scene, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClearanceRecord {
    /// 1-based.
    pub step: usize,
    pub a: String,
    pub b: String,
    /// `‖P_a − P_b‖ − (r_a + r_b)` in metres; negative means the margins overlap.
    pub clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitViolation {
    /// 1-based.
    pub step: usize,
    pub robot: String,
    pub coord: usize,
    pub order: LimitOrder,
    pub value: f64,
    pub bound: f64,
    pub excess: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Smallest clearance at each step, `None` when the step has no candidate pairs.
    pub min_clearance: Vec<Option<f64>>,
    pub worst_clearance: Option<ClearanceRecord>,
    /// Every pair and step with negative clearance.
    pub collisions: Vec<ClearanceRecord>,
    pub limit_violations: Vec<LimitViolation>,
}

impl ValidationReport {
    /// True when no clearance is below `-tol` and no limit is exceeded by more than `tol`.
    pub fn is_clean(&self, tol: f64) -> bool {
        self.collisions.iter().all(|c| c.clearance >= -tol)
            && self.limit_violations.iter().all(|v| v.excess <= tol)
    }
}

/// Recomputes every candidate pair's clearance with the exact oracle and every limit value.
pub fn validate(scene: &Scene, traj: &Trajectory) -> Result<ValidationReport> {
    scene.check_trajectory(traj)?;
    let per_step: Vec<Vec<ClearanceRecord>> = (0..traj.steps())
        .into_par_iter()
        .map(|i| {
            let geometry = StepGeometry::new(scene, traj.row(i));
            scene
                .candidate_pairs()
                .iter()
                .map(|pair| {
                    let (a, b) = (&geometry.world[pair.a], &geometry.world[pair.b]);
                    ClearanceRecord {
                        step: i + 1,
                        a: scene.primitive_label(pair.a),
                        b: scene.primitive_label(pair.b),
                        clearance: exact_distance(a, b).sqrt() - (a.margin + b.margin),
                    }
                })
                .collect()
        })
        .collect();

    let mut report = ValidationReport::default();
    for records in per_step {
        let worst = records
            .iter()
            .min_by(|x, y| x.clearance.total_cmp(&y.clearance))
            .cloned();
        report
            .min_clearance
            .push(worst.as_ref().map(|w| w.clearance));
        if let Some(w) = worst {
            if report
                .worst_clearance
                .as_ref()
                .is_none_or(|c| w.clearance < c.clearance)
            {
                report.worst_clearance = Some(w);
            }
        }
        report
            .collisions
            .extend(records.into_iter().filter(|r| r.clearance < 0.0));
    }

    for (r, entry) in scene.robots().iter().enumerate() {
        let o = scene.robot_offset(r);
        let d = entry.model.dim();
        let rows: Vec<&[f64]> = (0..traj.steps()).map(|i| &traj.row(i)[o..o + d]).collect();
        for i in 0..traj.steps() {
            for lv in entry.model.limit_values(&rows, i, traj.h()) {
                let mut push = |bound: f64, excess: f64| {
                    if excess > 0.0 {
                        report.limit_violations.push(LimitViolation {
                            step: i + 1,
                            robot: entry.model.name().to_string(),
                            coord: lv.coord,
                            order: lv.order,
                            value: lv.value,
                            bound,
                            excess,
                        });
                    }
                };
                if let Some(u) = lv.upper {
                    push(u, lv.value - u);
                }
                if let Some(l) = lv.lower {
                    push(l, l - lv.value);
                }
            }
        }
    }
    Ok(report)
}
