//! Contact-anchored 6-DoF parallel-jaw grasp synthesis.
//!
//! Grasps are encoded by an observed contact point `c`, a baseline direction
//! `b`, an approach direction `a` and an opening width `w`. The crate covers
//! the full pipeline around that encoding:
//!
//! * [`geometry`]: the contact ↔ pose maps, Gram-Schmidt orthonormalization and
//!   gripper control points.
//! * [`mesh`], [`collide`], [`scene`]: procedural table-top scenes with
//!   collision-free stable placements.
//! * [`annotation`]: antipodal ground-truth grasp sets.
//! * [`render`], [`ply`]: virtual depth cameras and per-point contact labels.
//! * [`losses`], [`tape`], [`network`], [`train`]: the training objective and a
//!   small point-set network trained by reverse-mode differentiation.
//! * [`inference`]: grasp selection and the success / coverage metrics.

pub mod annotation;
pub mod benchmark;
pub mod collide;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod mesh;
pub mod network;
pub mod ply;
pub mod render;
pub mod rng;
pub mod scene;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{ContactGraspParams, GraspPose, GripperModel, Vec3};
