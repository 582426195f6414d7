//! Derivatives of the inner minimum w.r.t. the outer variables `x`.
//!
//! The minimizer `t*(x)` of `U(x, t)` satisfies `∂U/∂t = 0`, so by the implicit function
//! theorem `dt/dx = -(∂²U/∂t²)⁻¹ ∂²U/∂t∂x`. The distance gradient then follows from the chain
//! rule through `t*`, and the Hessian uses the same sensitivity while dropping the second
//! derivative of `t*` and the curvature of the kinematic map.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};

use crate::distance::{eval_u, InnerSettings, PairDifference, ProximityResult};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::primitives::{Primitive, WorldPrimitive};

/// A world primitive together with the Jacobians of its anchor and vectors w.r.t. `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingPrimitive {
    pub world: WorldPrimitive,
    /// `∂p/∂x`, 3 × n_x.
    pub anchor_jac: Matrix3xX<f64>,
    /// `∂v_l/∂x` for each vector, 3 × n_x.
    pub vector_jacs: Vec<Matrix3xX<f64>>,
}

impl MovingPrimitive {
    /// A primitive that does not depend on `x`.
    pub fn fixed(world: WorldPrimitive, n_x: usize) -> Self {
        let vector_jacs = vec![Matrix3xX::zeros(n_x); world.dim()];
        Self {
            world,
            anchor_jac: Matrix3xX::zeros(n_x),
            vector_jacs,
        }
    }

    /// A primitive on a free rigid body whose six pose coordinates sit at `offset` in `x`.
    pub fn free_body(primitive: &Primitive, pose: &Pose, n_x: usize, offset: usize) -> Self {
        let world = primitive.place(pose);
        let derivs = pose.rotation_derivatives();
        let mut anchor_jac = Matrix3xX::zeros(n_x);
        for k in 0..3 {
            anchor_jac[(k, offset + k)] = 1.0;
        }
        for (k, d) in derivs.iter().enumerate() {
            anchor_jac.set_column(offset + 3 + k, &(d * primitive.anchor().coords));
        }
        let vector_jacs = primitive
            .vectors()
            .iter()
            .map(|v| {
                let mut jac = Matrix3xX::zeros(n_x);
                for (k, d) in derivs.iter().enumerate() {
                    jac.set_column(offset + 3 + k, &(d * v));
                }
                jac
            })
            .collect();
        Self {
            world,
            anchor_jac,
            vector_jacs,
        }
    }

    pub fn n_x(&self) -> usize {
        self.anchor_jac.ncols()
    }

    /// `∂P/∂x` at parameters `t`.
    pub fn point_jacobian_x(&self, t: &[f64]) -> Matrix3xX<f64> {
        self.vector_jacs
            .iter()
            .zip(t)
            .fold(self.anchor_jac.clone(), |acc, (j, &s)| acc + j * s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDerivatives {
    /// `dt/dx`, (L_A + L_B) × n_x.
    pub dt_dx: DMatrix<f64>,
    /// `dD/dx`.
    pub grad_x: DVector<f64>,
    /// Symmetric approximation of `d²D/dx²`.
    pub hess_xx: DMatrix<f64>,
}

/// Partial derivatives of `D(x, t)` at a fixed `t`.
struct Partials {
    /// `∂D/∂t`
    d_t: DVector<f64>,
    /// `∂D/∂x`
    d_x: DVector<f64>,
    /// `∂²D/∂t²`
    d_tt: DMatrix<f64>,
    /// `∂²D/∂t∂x`, m × n_x
    d_tx: DMatrix<f64>,
    /// Gauss-Newton `∂²D/∂x²`
    d_xx: DMatrix<f64>,
}

fn check_space(a: &MovingPrimitive, b: &MovingPrimitive, t: &[f64]) -> Result<()> {
    if a.n_x() != b.n_x() {
        return Err(Error::DimensionMismatch {
            expected: a.n_x(),
            found: b.n_x(),
        });
    }
    let m = a.world.dim() + b.world.dim();
    if t.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: t.len(),
        });
    }
    Ok(())
}

fn partials(a: &MovingPrimitive, b: &MovingPrimitive, t: &[f64]) -> Partials {
    let pair = PairDifference::new(&a.world, &b.world);
    let la = a.world.dim();
    let m = pair.dim();
    let n = a.n_x();
    let d: Vector3<f64> = pair.diff(t);
    let dx: Matrix3xX<f64> = a.point_jacobian_x(&t[..la]) - b.point_jacobian_x(&t[la..]);

    let d_t = pair.jac.tr_mul(&d) * 2.0;
    let d_x = dx.tr_mul(&d) * 2.0;
    let d_tt = pair.jac.tr_mul(&pair.jac) * 2.0;
    let mut d_tx = pair.jac.tr_mul(&dx) * 2.0;
    for l in 0..m {
        let (jac, sign) = if l < la {
            (&a.vector_jacs[l], 2.0)
        } else {
            (&b.vector_jacs[l - la], -2.0)
        };
        let row = jac.tr_mul(&d) * sign;
        for c in 0..n {
            d_tx[(l, c)] += row[c];
        }
    }
    let d_xx = dx.tr_mul(&dx) * 2.0;
    Partials {
        d_t,
        d_x,
        d_tt,
        d_tx,
        d_xx,
    }
}

/// `dt/dx = -(∂²U/∂t²)⁻¹ ∂²U/∂t∂x` at a converged inner solution.
///
/// Refuses results that did not converge, since the identity only holds where `∂U/∂t = 0`.
pub fn sensitivity_matrix(
    a: &MovingPrimitive,
    b: &MovingPrimitive,
    result: &ProximityResult,
    settings: &InnerSettings,
) -> Result<DMatrix<f64>> {
    let t = result.t_star.as_slice();
    check_space(a, b, t)?;
    if !result.converged || result.grad_norm > settings.grad_tol {
        return Err(Error::NotConverged {
            grad_norm: result.grad_norm,
            steps: result.newton_steps,
        });
    }
    let n = a.n_x();
    if t.is_empty() {
        return Ok(DMatrix::zeros(0, n));
    }
    let inner = eval_u(&a.world, &b.world, t, settings)?;
    let parts = partials(a, b, t);
    let chol = inner.hess.cholesky().ok_or(Error::SingularHessian)?;
    Ok(-chol.solve(&parts.d_tx))
}

/// `dD/dx = ∂D/∂x + ∂D/∂t · dt/dx`.
pub fn distance_gradient(
    a: &MovingPrimitive,
    b: &MovingPrimitive,
    t_star: &[f64],
    dt_dx: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_space(a, b, t_star)?;
    check_sensitivity_shape(dt_dx, t_star.len(), a.n_x())?;
    let parts = partials(a, b, t_star);
    Ok(parts.d_x + dt_dx.tr_mul(&parts.d_t))
}

/// `(dt/dxᵀ ∂²D/∂t² + 2 ∂²D/∂x∂t) dt/dx + ∂²D/∂x²`, symmetrized.
pub fn distance_hessian(
    a: &MovingPrimitive,
    b: &MovingPrimitive,
    t_star: &[f64],
    dt_dx: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_space(a, b, t_star)?;
    check_sensitivity_shape(dt_dx, t_star.len(), a.n_x())?;
    let parts = partials(a, b, t_star);
    Ok(assemble_hessian(&parts, dt_dx))
}

fn assemble_hessian(parts: &Partials, dt_dx: &DMatrix<f64>) -> DMatrix<f64> {
    let left = dt_dx.tr_mul(&parts.d_tt) + parts.d_tx.transpose() * 2.0;
    let h = left * dt_dx + &parts.d_xx;
    (&h + h.transpose()) * 0.5
}

fn check_sensitivity_shape(dt_dx: &DMatrix<f64>, m: usize, n: usize) -> Result<()> {
    if dt_dx.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: dt_dx.nrows(),
        });
    }
    if dt_dx.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: dt_dx.ncols(),
        });
    }
    Ok(())
}

/// Sensitivity, gradient and Hessian in one pass.
pub fn pair_derivatives(
    a: &MovingPrimitive,
    b: &MovingPrimitive,
    result: &ProximityResult,
    settings: &InnerSettings,
) -> Result<PairDerivatives> {
    let dt_dx = sensitivity_matrix(a, b, result, settings)?;
    let parts = partials(a, b, result.t_star.as_slice());
    let grad_x = &parts.d_x + dt_dx.tr_mul(&parts.d_t);
    let hess_xx = assemble_hessian(&parts, &dt_dx);
    Ok(PairDerivatives {
        dt_dx,
        grad_x,
        hess_xx,
    })
}
