//! Lie-group camera math, pinhole projection, correspondence induction and
//! Sim(3) trajectory alignment.

mod align;
mod camera;
mod lie;

pub use align::{umeyama_sim3, umeyama_sim3_tolerant};
pub use camera::{induced_flow, warp_pixel, FlowField, Intrinsics, Z_MIN};
pub use lie::{
    pose_geodesic_error, relative_pose, se3_exp, se3_log, skew, so3_exp, so3_log, RigidTransform,
    SimTransform, Twist, MAX_LOG_ANGLE,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to π for a unique logarithm")]
    AngleNearPi { angle: f64 },
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("disparity is masked or not positive")]
    InvalidDisparity,
    #[error("point configuration is degenerate (fewer than 3 points or collinear)")]
    DegenerateConfiguration,
    #[error("correspondence lists differ in length ({src} vs {dst})")]
    LengthMismatch { src: usize, dst: usize },
    #[error("similarity scale must be positive and finite, got {scale}")]
    NonPositiveScale { scale: f64 },
    #[error("invalid intrinsics {0:?}")]
    InvalidIntrinsics(Intrinsics),
}
