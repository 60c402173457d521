//! Minimal incremental structure from motion: tracks, initialization,
//! PnP registration, triangulation and bundle adjustment.

mod ba;
mod pnp;
mod reconstruct;
mod tracks;
mod triangulation;

pub use ba::{bundle_adjust, reprojection_jacobian, BaReport, ReprojectionJacobian};
pub use pnp::{dlt_pose, refine_pose, register_image, register_image_with_prior, PnpConfig};
pub use reconstruct::{median_triangulation_angle, reconstruct, select_init_pair, tracks_of, InitCandidate, PairGeometry, SfmInput};
pub use tracks::{build_tracks, Observation, Track};
pub use triangulation::{max_ray_angle, triangulate_multiview, triangulate_tracks};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, GeomError, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SfmError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("registration of frame {frame} failed with {inliers} inliers")]
    RegistrationFailed { frame: usize, inliers: usize },
    #[error("no pair qualifies to start a reconstruction")]
    NoInitPair,
    #[error("normal equations stayed singular while raising the damping")]
    SingularNormalEquations,
    #[error("bundle adjustment needs at least two registered frames and one point")]
    NothingToAdjust,
    #[error("no intrinsics for frame {0}")]
    UnknownFrame(usize),
    #[error("invalid sfm configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfmConfig {
    pub max_reprojection_px: f64,
    pub min_triangulation_angle_deg: f64,
    pub init_min_angle_deg: f64,
    pub init_min_inliers: usize,
    /// Minimum number of points a bootstrap must triangulate.
    pub init_min_points: usize,
    pub ba_max_iterations: usize,
    pub ba_rel_tol: f64,
    /// Run bundle adjustment after this many registrations.
    pub ba_every: usize,
    pub min_registration_correspondences: usize,
    pub pnp: PnpConfig,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            max_reprojection_px: 4.0,
            min_triangulation_angle_deg: 1.0,
            init_min_angle_deg: 2.0,
            init_min_inliers: 50,
            init_min_points: 30,
            ba_max_iterations: 50,
            ba_rel_tol: 1e-8,
            ba_every: 5,
            min_registration_correspondences: 6,
            pnp: PnpConfig::default(),
        }
    }
}

impl SfmConfig {
    pub fn validate(&self) -> Result<(), SfmError> {
        let positive = [self.max_reprojection_px, self.min_triangulation_angle_deg, self.init_min_angle_deg, self.ba_rel_tol];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(SfmError::InvalidConfig("thresholds must be positive"));
        }
        if self.ba_max_iterations == 0 || self.ba_every == 0 || self.init_min_inliers == 0 {
            return Err(SfmError::InvalidConfig("counts must be positive"));
        }
        if self.min_registration_correspondences < 6 {
            return Err(SfmError::InvalidConfig("registration needs at least 6 correspondences"));
        }
        self.pnp.validate()
    }
}

/// A partial reconstruction: camera-from-world poses of its registered
/// frames and the points of the tracks it triangulated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fragment {
    pub fragment_id: usize,
    pub poses: BTreeMap<usize, Pose>,
    /// Track index to world point.
    pub points: BTreeMap<usize, Vector3<f64>>,
    /// Frames in registration order; the first two define the gauge.
    pub registration_order: Vec<usize>,
    /// Set when a bundle adjustment gave up and left the fragment unchanged.
    pub ba_warning: bool,
}

impl Fragment {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.poses.contains_key(&frame)
    }

    /// Frames sorted ascending.
    pub fn frames(&self) -> Vec<usize> {
        self.poses.keys().copied().collect()
    }
}

/// Per-frame intrinsics lookup.
pub(crate) fn intrinsics_of(intrinsics: &[CameraIntrinsics], frame: usize) -> Result<&CameraIntrinsics, SfmError> {
    intrinsics.get(frame).ok_or(SfmError::UnknownFrame(frame))
}
