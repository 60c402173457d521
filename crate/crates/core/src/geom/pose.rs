use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

/// Returns the representative of `q` with non-negative scalar part.
pub fn canonical_quaternion(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Builds a unit quaternion from (w, x, y, z) components, renormalizing and
/// fixing the hemisphere.
pub fn quaternion_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    canonical_quaternion(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
}

pub fn quaternion_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let q = canonical_quaternion(*q);
    [q.w, q.i, q.j, q.k]
}

/// Camera-from-world rigid transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: canonical_quaternion(rotation), translation }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -(r_inv * self.translation))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }
}

/// Motion mapping camera-i coordinates to camera-j coordinates:
/// `x_j = R * x_i + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub frame_i: usize,
    pub frame_j: usize,
}

impl RelativeMotion {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, frame_i: usize, frame_j: usize) -> Self {
        Self { rotation: canonical_quaternion(rotation), translation, frame_i, frame_j }
    }

    pub fn identity(frame_i: usize, frame_j: usize) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), frame_i, frame_j)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn as_pose(&self) -> Pose {
        Pose::new(self.rotation, self.translation)
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self { translation, ..*self }
    }

    /// Same direction, translation length set to `length`. A zero
    /// translation is left untouched.
    pub fn with_translation_norm(&self, length: f64) -> Self {
        let n = self.translation.norm();
        if n == 0.0 {
            *self
        } else {
            self.with_translation(self.translation * (length / n))
        }
    }
}

/// Motion from camera i to camera j given both camera-from-world poses.
pub fn relative_motion(pose_i: &Pose, pose_j: &Pose) -> RelativeMotion {
    relative_motion_indexed(pose_i, pose_j, 0, 0)
}

pub fn relative_motion_indexed(pose_i: &Pose, pose_j: &Pose, frame_i: usize, frame_j: usize) -> RelativeMotion {
    let rotation = pose_j.rotation * pose_i.rotation.inverse();
    let translation = pose_j.translation - rotation * pose_i.translation;
    RelativeMotion::new(rotation, translation, frame_i, frame_j)
}
