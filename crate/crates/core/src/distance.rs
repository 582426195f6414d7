//! Shortest squared distance between two primitives as a small regularized minimization.
//!
//! For a pair `(A, B)` with stacked parameters `t = (t_A, t_B)` the solver minimizes
//!
//! ```text
//! U(t) = ||P_A(t_A) - P_B(t_B)||² + w_R ||t - 0.5||² + w_C Σ (S⁺₁(t_l) + S⁻₀(t_l))
//! ```
//!
//! with Newton's method. `U` is piecewise quadratic and strongly convex for `w_R > 0`, so the
//! Hessian is always positive definite, including for parallel segments where the plain
//! distance has a whole line of minimizers.

use nalgebra::{DMatrix, DVector, Matrix3xX, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{columns, WorldPrimitive};

pub type ParamVector = DVector<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSettings {
    /// Weight of the pull toward primitive centers (m² per unit t²).
    pub w_r: f64,
    /// Weight of the soft box barriers on `t`.
    pub w_c: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self {
            w_r: 1e-4,
            w_c: 1e4,
            grad_tol: 1e-10,
            max_iters: 50,
        }
    }
}

impl InnerSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Semantic(format!(
                    "inner setting {name} must be positive, got {v}"
                )))
            }
        };
        positive("w_r", self.w_r)?;
        positive("w_c", self.w_c)?;
        positive("grad_tol", self.grad_tol)?;
        if self.max_iters == 0 {
            return Err(Error::Semantic(
                "inner setting max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProximityResult {
    /// `D(t*)`, the squared distance between the two closest points.
    pub d_sq: f64,
    pub t_star: ParamVector,
    pub closest_a: Point3<f64>,
    pub closest_b: Point3<f64>,
    pub newton_steps: usize,
    pub converged: bool,
    /// `||∂U/∂t||` at `t_star`.
    pub grad_norm: f64,
}

impl ProximityResult {
    pub fn distance(&self) -> f64 {
        self.d_sq.sqrt()
    }

    pub fn t_a(&self, dim_a: usize) -> &[f64] {
        &self.t_star.as_slice()[..dim_a]
    }

    pub fn t_b(&self, dim_a: usize) -> &[f64] {
        &self.t_star.as_slice()[dim_a..]
    }
}

/// Value, gradient and Hessian of `U` w.r.t. `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerObjective {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// `S⁺_l(t)`: zero below `l`, `(t - l)²` above.
pub fn barrier_plus(t: f64, l: f64) -> f64 {
    if t > l {
        (t - l) * (t - l)
    } else {
        0.0
    }
}

/// `S⁻_l(t)`: `(t - l)²` at or below `l`, zero above.
pub fn barrier_minus(t: f64, l: f64) -> f64 {
    if t <= l {
        (t - l) * (t - l)
    } else {
        0.0
    }
}

/// First and second derivative of `S⁺_l` at `t`.
pub fn barrier_plus_derivatives(t: f64, l: f64) -> (f64, f64) {
    if t > l {
        (2.0 * (t - l), 2.0)
    } else {
        (0.0, 0.0)
    }
}

/// First and second derivative of `S⁻_l` at `t`.
pub fn barrier_minus_derivatives(t: f64, l: f64) -> (f64, f64) {
    if t <= l {
        (2.0 * (t - l), 2.0)
    } else {
        (0.0, 0.0)
    }
}

/// `R(t) = ||t - 0.5||²`.
pub fn eval_r(t: &[f64]) -> f64 {
    t.iter().map(|&x| (x - 0.5) * (x - 0.5)).sum()
}

/// Affine form of the pair difference: `P_A - P_B = offset + jac * t`.
#[derive(Clone, Debug)]
pub(crate) struct PairDifference {
    pub offset: Vector3<f64>,
    pub jac: Matrix3xX<f64>,
    pub dim_a: usize,
}

impl PairDifference {
    pub fn new(a: &WorldPrimitive, b: &WorldPrimitive) -> Self {
        let mut cols = a.vectors.clone();
        cols.extend(b.vectors.iter().map(|v| -v));
        Self {
            offset: a.anchor - b.anchor,
            jac: columns(&cols),
            dim_a: a.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.jac.ncols()
    }

    pub fn diff(&self, t: &[f64]) -> Vector3<f64> {
        self.jac
            .column_iter()
            .zip(t)
            .fold(self.offset, |acc, (c, &s)| acc + c * s)
    }

    /// `∂U/∂t · dir` at `t + alpha * dir`.
    fn slope(&self, t: &[f64], dir: &[f64], alpha: f64, s: &InnerSettings) -> f64 {
        let point: Vec<f64> = t.iter().zip(dir).map(|(x, p)| x + alpha * p).collect();
        let d = self.diff(&point);
        let jd = self.jac.tr_mul(&d);
        point
            .iter()
            .enumerate()
            .map(|(l, &x)| {
                let (gp, _) = barrier_plus_derivatives(x, 1.0);
                let (gm, _) = barrier_minus_derivatives(x, 0.0);
                (2.0 * jd[l] + 2.0 * s.w_r * (x - 0.5) + s.w_c * (gp + gm)) * dir[l]
            })
            .sum()
    }

    /// Exact minimizer of `α ↦ U(t + α dir)` over `α ≥ 0` for a descent direction.
    ///
    /// Along a ray `U` is convex and piecewise quadratic with kinks where some `t_l`
    /// crosses 0 or 1, so the minimum is found by walking the pieces in order.
    fn line_minimum(&self, t: &[f64], dir: &[f64], s: &InnerSettings) -> f64 {
        let mut kinks: Vec<f64> = t
            .iter()
            .zip(dir)
            .filter(|(_, &p)| p != 0.0)
            .flat_map(|(&x, &p)| [-x / p, (1.0 - x) / p])
            .filter(|&a| a > 0.0 && a.is_finite())
            .collect();
        kinks.sort_by(f64::total_cmp);
        kinks.push(f64::INFINITY);

        let jp = self.diff(dir) - self.offset;
        let base_curv =
            2.0 * jp.norm_squared() + 2.0 * s.w_r * dir.iter().map(|p| p * p).sum::<f64>();
        let mut start = 0.0;
        let mut slope = self.slope(t, dir, 0.0, s);
        for &end in &kinks {
            if slope >= 0.0 {
                return start;
            }
            let probe = if end.is_finite() {
                0.5 * (start + end)
            } else {
                start + 1.0
            };
            let active: f64 = t
                .iter()
                .zip(dir)
                .map(|(&x, &p)| {
                    let y = x + probe * p;
                    if y > 1.0 || y <= 0.0 {
                        p * p
                    } else {
                        0.0
                    }
                })
                .sum();
            let curv = base_curv + 2.0 * s.w_c * active;
            let root = start - slope / curv;
            if root <= end {
                return root;
            }
            start = end;
            slope = self.slope(t, dir, end, s);
        }
        start
    }

    fn objective(&self, t: &[f64], s: &InnerSettings) -> InnerObjective {
        let m = self.dim();
        let d = self.diff(t);
        let mut grad = self.jac.tr_mul(&d) * 2.0;
        let mut hess = self.jac.tr_mul(&self.jac) * 2.0;
        let mut penalty = 0.0;
        for (l, &x) in t.iter().enumerate() {
            let (gp, hp) = barrier_plus_derivatives(x, 1.0);
            let (gm, hm) = barrier_minus_derivatives(x, 0.0);
            penalty += barrier_plus(x, 1.0) + barrier_minus(x, 0.0);
            grad[l] += 2.0 * s.w_r * (x - 0.5) + s.w_c * (gp + gm);
            hess[(l, l)] += 2.0 * s.w_r + s.w_c * (hp + hm);
        }
        debug_assert_eq!(grad.len(), m);
        InnerObjective {
            value: d.norm_squared() + s.w_r * eval_r(t) + s.w_c * penalty,
            grad,
            hess,
        }
    }
}

fn check_pair_dim(a: &WorldPrimitive, b: &WorldPrimitive, t: &[f64]) -> Result<()> {
    let expected = a.dim() + b.dim();
    if t.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: t.len(),
        });
    }
    Ok(())
}

/// `||P_A(t_A) - P_B(t_B)||²` before any minimization.
pub fn eval_d(a: &WorldPrimitive, b: &WorldPrimitive, t: &[f64]) -> Result<f64> {
    check_pair_dim(a, b, t)?;
    Ok(PairDifference::new(a, b).diff(t).norm_squared())
}

pub fn eval_u(
    a: &WorldPrimitive,
    b: &WorldPrimitive,
    t: &[f64],
    settings: &InnerSettings,
) -> Result<InnerObjective> {
    check_pair_dim(a, b, t)?;
    Ok(PairDifference::new(a, b).objective(t, settings))
}

/// Newton's method on `U`, starting from `warm_start` or the centers `t = 0.5`.
///
/// Running out of iterations is reported through `converged = false`.
pub fn solve_inner(
    a: &WorldPrimitive,
    b: &WorldPrimitive,
    settings: &InnerSettings,
    warm_start: Option<&[f64]>,
) -> Result<ProximityResult> {
    let pair = PairDifference::new(a, b);
    let m = pair.dim();
    let mut t = match warm_start {
        Some(w) => {
            check_pair_dim(a, b, w)?;
            DVector::from_column_slice(w)
        }
        None => DVector::from_element(m, 0.5),
    };

    let mut steps = 0;
    let mut obj = pair.objective(t.as_slice(), settings);
    let mut grad_norm = obj.grad.norm();
    while grad_norm > settings.grad_tol && steps < settings.max_iters {
        let chol = obj.hess.clone().cholesky().ok_or(Error::SingularHessian)?;
        let direction = -chol.solve(&obj.grad);
        let alpha = pair.line_minimum(t.as_slice(), direction.as_slice(), settings);
        t.axpy(alpha, &direction, 1.0);
        steps += 1;
        obj = pair.objective(t.as_slice(), settings);
        grad_norm = obj.grad.norm();
    }

    let converged = grad_norm <= settings.grad_tol;
    let closest_a = a.point_unchecked(&t.as_slice()[..pair.dim_a]);
    let closest_b = b.point_unchecked(&t.as_slice()[pair.dim_a..]);
    Ok(ProximityResult {
        d_sq: (closest_a - closest_b).norm_squared(),
        t_star: t,
        closest_a,
        closest_b,
        newton_steps: steps,
        converged,
        grad_norm,
    })
}
