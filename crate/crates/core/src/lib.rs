//! Equivariant observer for monocular visual SLAM.
//!
//! The library builds the symmetry group `SE(3) x (SO(3) x MR(1))^n` of the
//! bearings-only SLAM problem, lifts the rigid-body kinematics onto it, and
//! runs a constant-gain nonlinear observer whose landmark error dynamics are
//! stabilized by separate bearing and depth innovations together with a range
//! barrier. The pose component is corrected by a small weighted least squares
//! that minimizes the instantaneous map drift.
//!
//! Modules:
//! - [`geometry`]: rotations, poses, bearings, skew calculus, exponentials.
//! - [`vslam_group`]: the symmetry group, its actions, output map and lift.
//! - [`observer`]: innovations, barrier, integration, landmark lifecycle.
//! - [`simulation`]: ground-truth world, scenario configs, run harness.
//! - [`evaluation`]: trajectory alignment and equivalence metrics.

// Guards are written `!(x > bound)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod observer;
pub mod simulation;
pub mod vslam_group;

pub use error::{Error, Result};
