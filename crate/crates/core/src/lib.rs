//! Robust walking pattern generation.
//!
//! A linear-inverted-pendulum walking trajectory optimizer (velocity tracking,
//! ZMP centering and friction usage as a weighted quadratic program) runs in a
//! receding-horizon loop on a disturbed plant. A Gaussian-process Bayesian
//! optimizer tunes the ZMP and friction weights against the closed-loop
//! velocity tracking error plus a fall penalty.
//!
//! Module map:
//!
//! - [`lipm`]: exact discretization of the jerk-driven pendulum, ZMP and RCoF maps
//! - [`footstep`]: nominal footsteps, support timeline, reachable boxes
//! - [`gait_qp`]: condensed QP assembly, dense dual active-set solver, plan decoding
//! - [`plant`]: disturbed plant with replanning MPC, slip and fall models
//! - [`bo`]: outer cost, GP surrogate, expected improvement, tuning driver
//! - [`harness`]: config, scenarios, grid oracle, CSV output

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bo;
pub mod error;
pub mod footstep;
pub mod gait_qp;
pub mod harness;
pub mod lipm;
pub mod plant;

pub use error::{Error, Result};
pub use nalgebra::Vector2;
