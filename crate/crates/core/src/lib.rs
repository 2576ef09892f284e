//! Core of a simulated teleoperation cell: frame conventions, arm kinematics,
//! the safety-filtered controller, depth post-processing, the binary position
//! stream codec, demonstration session files and evaluation statistics.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root pin the `f64` instantiation the runtime uses.

pub mod analysis;
pub mod config;
pub mod controller;
pub mod fault;
pub mod frames;
pub mod kinematics;
pub mod pointcloud;
pub mod pose;
pub mod scalar;
pub mod session;
pub mod wire;

pub use scalar::Real;

pub type RobotPose = pose::RobotPose<f64>;
pub type ArPose = frames::ArPose<f64>;
pub type JointVector = kinematics::JointVector<f64>;
pub type ArmModel = kinematics::ArmModel<f64>;
pub type Controller = controller::Controller<f64>;
pub type SafetyConfig = controller::SafetyConfig<f64>;
pub type ControllerConfig = controller::ControllerConfig<f64>;
pub type DepthFrame = pointcloud::DepthFrame<f64>;
pub type PointCloud = pointcloud::PointCloud<f64>;
pub type PipelineParams = pointcloud::PipelineParams<f64>;
