//! Rigid poses parameterized by a translation and XYZ-intrinsic Euler angles.
//!
//! The rotation is `R = Rx(a) * Ry(b) * Rz(c)`. Angles are kept unwrapped; gimbal lock
//! (`b = ±π/2`) is a valid configuration, the orientation derivatives just lose rank there.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(default = "zero3")]
    pub translation: [f64; 3],
    #[serde(default = "zero3")]
    pub rotation: [f64; 3],
}

fn zero3() -> [f64; 3] {
    [0.0; 3]
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

impl Pose {
    pub const fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: [0.0; 3],
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self {
            translation: translation.into(),
            rotation: rotation.into(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation: [x, y, z],
            rotation: [0.0; 3],
        }
    }

    /// Reads a pose from the 6 packed coordinates `(x, y, z, a, b, c)`.
    pub fn from_coords(coords: &[f64]) -> Self {
        Self {
            translation: [coords[0], coords[1], coords[2]],
            rotation: [coords[3], coords[4], coords[5]],
        }
    }

    pub fn coords(&self) -> [f64; 6] {
        let t = self.translation;
        let r = self.rotation;
        [t[0], t[1], t[2], r[0], r[1], r[2]]
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [a, b, c] = self.rotation;
        rot_x(a) * rot_y(b) * rot_z(c)
    }

    /// Partial derivatives of the rotation matrix w.r.t. the three Euler angles.
    pub fn rotation_derivatives(&self) -> [Matrix3<f64>; 3] {
        let [a, b, c] = self.rotation;
        let (rx, ry, rz) = (rot_x(a), rot_y(b), rot_z(c));
        [
            drot_x(a) * ry * rz,
            rx * drot_y(b) * rz,
            rx * ry * drot_z(c),
        ]
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * p.coords + self.translation_vector())
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }
}

/// A rigid transform as rotation matrix plus translation, used for composing chains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Frame {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self {
            rotation: pose.rotation_matrix(),
            translation: pose.translation_vector(),
        }
    }

    pub fn compose(&self, other: &Frame) -> Frame {
        Frame {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = axis.cross_matrix();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}
