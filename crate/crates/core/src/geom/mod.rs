//! Camera model, rigid poses, two-view epipolar geometry and pose metrics.
//!
//! Epipolar quantities are always expressed in normalized camera
//! coordinates (`K⁻¹·pixel`); callers convert pixel thresholds by dividing
//! by [`CameraIntrinsics::mean_focal`].

mod camera;
mod essential;
mod metrics;
mod pose;
mod triangulate;

pub use camera::{project, CameraIntrinsics};
pub use essential::{
    decompose_essential, eight_point, essential_from_motion, motion_candidates, sampson_distance, Correspondence,
    EssentialMatrix, DEGENERACY_RATIO,
};
pub use metrics::{pose_errors, rotation_angle_between, PoseErrors};
pub use pose::{
    canonical_quaternion, quaternion_from_wxyz, quaternion_wxyz, relative_motion, relative_motion_indexed, Pose,
    RelativeMotion,
};
pub use triangulate::{ray_angle, triangulate, Triangulated};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeomError {
    #[error("point has non-positive depth in the camera frame")]
    NonPositiveDepth,
    #[error("translation is (numerically) zero")]
    DegenerateTranslation,
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("degenerate point configuration (unstable nullspace)")]
    DegenerateConfiguration,
    #[error("sampson denominator vanishes")]
    ZeroGradient,
    #[error("cheirality vote is tied between two motion candidates")]
    CheiralityAmbiguity,
    #[error("rays are parallel")]
    ParallelRays,
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
