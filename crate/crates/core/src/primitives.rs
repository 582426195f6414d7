//! Convex collision primitives described as an anchor point plus up to three scaled vectors.
//!
//! Every primitive maps a parameter vector `t ∈ [0,1]^L` to the point
//! `p + Σ t_l v_l`. The safety margin dilates the resulting point set, so a sphere is a
//! point with a margin and a capsule is a segment with a margin.

use nalgebra::{Matrix3, Matrix3x6, Matrix3xX, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Sphere,
    Capsule,
    Rectangle,
    Box,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::Sphere,
        PrimitiveKind::Capsule,
        PrimitiveKind::Rectangle,
        PrimitiveKind::Box,
    ];

    /// Number of scaled vectors the kind carries.
    pub fn arity(self) -> usize {
        match self {
            PrimitiveKind::Sphere => 0,
            PrimitiveKind::Capsule => 1,
            PrimitiveKind::Rectangle => 2,
            PrimitiveKind::Box => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Sphere => "Sphere",
            PrimitiveKind::Capsule => "Capsule",
            PrimitiveKind::Rectangle => "Rectangle",
            PrimitiveKind::Box => "Box",
        }
    }
}

impl std::fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What a primitive's local coordinates are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Attachment {
    #[default]
    World,
    Link(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    kind: PrimitiveKind,
    anchor: Point3<f64>,
    vectors: Vec<Vector3<f64>>,
    margin: f64,
    attachment: Attachment,
}

impl Primitive {
    pub fn new(
        kind: PrimitiveKind,
        anchor: Point3<f64>,
        vectors: Vec<Vector3<f64>>,
        margin: f64,
    ) -> Result<Self> {
        if vectors.len() != kind.arity() {
            let plural = if kind.arity() == 1 { "" } else { "s" };
            return Err(Error::InvalidPrimitive(format!(
                "{kind} requires {} vector{plural}, got {}",
                kind.arity(),
                vectors.len()
            )));
        }
        if !margin.is_finite() || margin < 0.0 {
            return Err(Error::InvalidPrimitive(format!(
                "{kind} margin must be finite and non-negative, got {margin}"
            )));
        }
        if matches!(kind, PrimitiveKind::Sphere | PrimitiveKind::Capsule) && margin <= 0.0 {
            return Err(Error::InvalidPrimitive(format!(
                "{kind} margin is its radius and must be positive"
            )));
        }
        if !anchor
            .coords
            .iter()
            .chain(vectors.iter().flat_map(|v| v.iter()))
            .all(|c| c.is_finite())
        {
            return Err(Error::InvalidPrimitive(format!(
                "{kind} has non-finite coordinates"
            )));
        }
        if vectors.iter().any(|v| v.norm_squared() == 0.0) {
            return Err(Error::InvalidPrimitive(format!(
                "{kind} has a zero-length vector"
            )));
        }
        if vectors.len() >= 2 {
            let gram = Matrix3xX::from_columns(&vectors).tr_mul(&Matrix3xX::from_columns(&vectors));
            let scale: f64 = vectors.iter().map(|v| v.norm_squared()).product();
            if gram.determinant() <= 1e-10 * scale {
                return Err(Error::InvalidPrimitive(format!(
                    "{kind} vectors must be linearly independent"
                )));
            }
        }
        Ok(Self {
            kind,
            anchor,
            vectors,
            margin,
            attachment: Attachment::World,
        })
    }

    pub fn sphere(center: Point3<f64>, radius: f64) -> Result<Self> {
        Self::new(PrimitiveKind::Sphere, center, Vec::new(), radius)
    }

    pub fn capsule(start: Point3<f64>, axis: Vector3<f64>, radius: f64) -> Result<Self> {
        Self::new(PrimitiveKind::Capsule, start, vec![axis], radius)
    }

    pub fn rectangle(
        corner: Point3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        margin: f64,
    ) -> Result<Self> {
        Self::new(PrimitiveKind::Rectangle, corner, vec![u, v], margin)
    }

    pub fn cuboid(
        corner: Point3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        w: Vector3<f64>,
        margin: f64,
    ) -> Result<Self> {
        Self::new(PrimitiveKind::Box, corner, vec![u, v, w], margin)
    }

    pub fn attached_to(mut self, attachment: Attachment) -> Self {
        self.attachment = attachment;
        self
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.kind
    }

    pub fn anchor(&self) -> &Point3<f64> {
        &self.anchor
    }

    pub fn vectors(&self) -> &[Vector3<f64>] {
        &self.vectors
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn attachment(&self) -> Attachment {
        self.attachment
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Local-frame point `p + Σ t_l v_l`.
    pub fn local_point(&self, t: &[f64]) -> Result<Point3<f64>> {
        check_dim(self.dim(), t.len())?;
        Ok(self.anchor + combine(&self.vectors, t))
    }

    /// Express the primitive in world coordinates under `pose`.
    pub fn place(&self, pose: &Pose) -> WorldPrimitive {
        let rot = pose.rotation_matrix();
        self.place_with(&rot, &pose.translation_vector())
    }

    pub(crate) fn place_with(
        &self,
        rot: &Matrix3<f64>,
        translation: &Vector3<f64>,
    ) -> WorldPrimitive {
        WorldPrimitive {
            kind: self.kind,
            anchor: Point3::from(rot * self.anchor.coords + translation),
            vectors: self.vectors.iter().map(|v| rot * v).collect(),
            margin: self.margin,
        }
    }

    /// Derivative of the world point w.r.t. the six pose coordinates
    /// (translation, then Euler angles).
    pub fn point_jacobian_x(&self, pose: &Pose, t: &[f64]) -> Result<Matrix3x6<f64>> {
        let local = self.local_point(t)?;
        let mut jac = Matrix3x6::zeros();
        jac.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        for (k, d) in pose.rotation_derivatives().iter().enumerate() {
            jac.set_column(3 + k, &(d * local.coords));
        }
        Ok(jac)
    }
}

/// A primitive expressed in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldPrimitive {
    pub kind: PrimitiveKind,
    pub anchor: Point3<f64>,
    pub vectors: Vec<Vector3<f64>>,
    pub margin: f64,
}

impl WorldPrimitive {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn point_on(&self, t: &[f64]) -> Result<Point3<f64>> {
        check_dim(self.dim(), t.len())?;
        Ok(self.point_unchecked(t))
    }

    pub(crate) fn point_unchecked(&self, t: &[f64]) -> Point3<f64> {
        self.anchor + combine(&self.vectors, t)
    }

    /// `∂P/∂t`: column `l` is `v_l`, independent of `t`.
    pub fn point_jacobian_t(&self) -> Matrix3xX<f64> {
        columns(&self.vectors)
    }

    /// Center and radius of a sphere enclosing the dilated primitive.
    pub fn bounding_center_radius(&self) -> (Point3<f64>, f64) {
        let center = self.anchor + self.vectors.iter().sum::<Vector3<f64>>() * 0.5;
        let radius = 0.5 * self.vectors.iter().map(|v| v.norm()).sum::<f64>() + self.margin;
        (center, radius)
    }

    /// Points `anchor + Σ t_l v_l` at the parallelepiped's corners.
    pub fn corners(&self) -> Vec<Point3<f64>> {
        let l = self.dim();
        (0..1usize << l)
            .map(|mask| {
                let t: Vec<f64> = (0..l).map(|i| ((mask >> i) & 1) as f64).collect();
                self.point_unchecked(&t)
            })
            .collect()
    }
}

fn combine(vectors: &[Vector3<f64>], t: &[f64]) -> Vector3<f64> {
    vectors
        .iter()
        .zip(t)
        .fold(Vector3::zeros(), |acc, (v, &s)| acc + v * s)
}

/// Stacks vectors as columns; unlike `from_columns` this accepts an empty list.
pub(crate) fn columns(vectors: &[Vector3<f64>]) -> Matrix3xX<f64> {
    Matrix3xX::from_fn(vectors.len(), |r, c| vectors[c][r])
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
