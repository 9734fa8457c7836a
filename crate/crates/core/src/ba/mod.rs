//! Weighted-reprojection bundle adjustment over poses, low-res disparities and
//! a shared focal, solved by Levenberg–Marquardt with a Schur complement on the
//! diagonal disparity block.

mod lm;
mod normalize;
mod problem;
mod schur;
mod system;

pub use lm::{
    apply_step, lm_iterate, motion_only_ba, DampingState, LmIteration, LmOptions, LmReport,
    LmStatus,
};
pub use normalize::{
    denormalize_focal, normalize_disparity, normalize_focal, rescale_translation,
    DISPARITY_P98_TARGET,
};
pub use problem::{BaProblem, Edge, MonoPrior, PixelJacobian, D_MIN};
pub use schur::{damped, predicted_decrease, schur_solve, Step, DAMPING_FLOOR};
pub use system::{
    analytic_jacobians, assemble_system, build_normal_equations, dense_pixel_rows, objective,
    prior_cost, reprojection_cost, reprojection_residuals, BlockSystem, CouplingBlock,
    EdgeJacobians, EdgeResiduals, ParamLayout, Residuals,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaError {
    #[error("reduced camera system is not positive definite")]
    SingularSystem,
    #[error("no pose is fixed; the gauge is free")]
    GaugeNotFixed,
    #[error("no valid disparities")]
    AllInvalid,
    #[error("inconsistent problem: {0}")]
    Inconsistent(String),
}

#[cfg(test)]
mod tests;
