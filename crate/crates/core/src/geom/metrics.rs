use nalgebra::UnitQuaternion;

use super::RelativeMotion;

/// Error of an estimated motion against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrors {
    /// Milliradians.
    pub rotation_mrad: f64,
    /// Meters.
    pub translation_m: f64,
}

/// Angle (radians) of `a⁻¹ b`. Equals `acos((tr(RaᵀRb) − 1) / 2)` but stays
/// accurate for tiny angles.
pub fn rotation_angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let d = a.inverse() * b;
    2.0 * d.imag().norm().atan2(d.w.abs())
}

pub fn pose_errors(est: &RelativeMotion, gt: &RelativeMotion) -> PoseErrors {
    PoseErrors {
        rotation_mrad: 1000.0 * rotation_angle_between(&gt.rotation, &est.rotation),
        translation_m: (est.translation - gt.translation).norm(),
    }
}
