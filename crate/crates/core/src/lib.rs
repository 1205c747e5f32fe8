//! Indoor localization toolkit: simulated floors and sensors, DNN Wi-Fi
//! fingerprinting, LiDAR/IMU dead reckoning with scan matching, and an
//! extended Kalman filter that fuses them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ekf;
pub mod eval;
pub mod experiment;
pub mod fingerprint;
pub mod geometry;
pub mod grid;
pub mod lidar_imu;
pub mod rng;
pub mod sensors;
pub mod trajectory;
pub mod world;

pub use geometry::{normalize_angle, Point2, Pose2D};
pub use grid::{CellState, GridGeometry, OccupancyGrid};
pub use trajectory::{TimedPose, Trajectory};
