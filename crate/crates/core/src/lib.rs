//! Kinematic simulation of vision-guided robotic sewing: image-based visual
//! servoing of a needle driver, stitch-size planning on fabric point clouds,
//! and a force-guided dual-arm knot-tying state machine.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod experiments;
pub mod geometry;
pub mod knot;
pub mod servo;
pub mod sim;
pub mod stitch;

pub use camera::{CameraIntrinsics, DepthImage, PointCloud};
pub use geometry::{interpolate_pose, velocity_twist, Pose, Twist, VelocityTwistMatrix};
pub use knot::{KnotPhase, KnotState};
pub use servo::{control_law, ServoConfig};
pub use stitch::{plan_stitch, StitchMode, StitchPlan};
