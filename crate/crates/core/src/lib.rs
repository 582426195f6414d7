//! Differentiable shortest distances between convex collision primitives, and a
//! collision-free multi-robot kinematic trajectory optimizer built on them.

pub mod bench;
pub mod distance;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod kinematics;
pub mod oracle;
pub mod primitives;
pub mod scenarios;
pub mod scene_io;
pub mod sensitivity;
pub mod trajopt;

pub use error::{Error, Result};
