//! Extrinsic calibration of vehicle-mounted range sensors from egomotion,
//! pole landmarks and ground points.

pub mod association;
pub mod calibration;
pub mod features;
pub mod geometry;
pub mod io;
pub mod lp;
pub mod mip;
pub mod online;
pub mod pipeline;
pub mod refine;
pub mod scalar;
pub mod sim;
pub mod yaw;

pub use scalar::Scalar;

pub type Pose = geometry::RigidTransform<f64>;
pub type Pose32 = geometry::RigidTransform<f32>;
pub type Pole = features::Pole<f64>;
pub type Plane = features::Plane<f64>;
pub type TimedPose = geometry::TimedPose<f64>;
