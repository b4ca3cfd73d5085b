//! Lifting 2D skeletal keypoints to 3D against a score-matching diffusion
//! prior, with domain adaptation of the prior and diffusion-based pose
//! augmentation.

pub mod adaptation;
pub mod augment;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod lifter;
pub mod numerics;
pub mod scalar;
pub mod score_model;
pub mod skeleton;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Pose3D64 = skeleton::Pose3D<f64>;
pub type Pose2D64 = skeleton::Pose2D<f64>;
pub type Intrinsics64 = geometry::CameraIntrinsics<f64>;
pub type ScoreModel64 = score_model::ScoreModel<f64>;
pub type ScoreModel32 = score_model::ScoreModel<f32>;
