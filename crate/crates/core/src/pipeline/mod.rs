//! End-to-end orchestration: the sequential two-view method, the
//! reconstruction-based method, sequence assembly and evaluation.

mod assembly;
mod config;
mod dataset;
mod evaluate;
mod manifest;
mod methods;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{canonical_quaternion, RelativeMotion};
use crate::io::IoError;
use crate::matching::{CropId, MatchError};
use crate::retrieval::RetrievalError;
use crate::robust::RobustError;
use crate::sfm::SfmError;
use crate::synth::SynthError;

pub use assembly::{assemble, forward_sign, fragment_scale, AssemblyConfig};
pub use config::{MethodOneConfig, MethodTwoConfig, PipelineConfig};
pub use dataset::{manifest_of_scene, DataDir, Dataset, SynthDataset};
pub use evaluate::{evaluate, Evaluation, PairError};
pub use manifest::{FrameManifest, FrameRecord};
pub use methods::{
    build_pair_list, combine_pairs, dense_correspondences, estimate_from_warp, match_pair, match_pairs, propose_and_filter, reconstruct_matches, run_method_one,
    run_method_two, two_view_estimates, uncovered_pairs, verify_matches, MethodTwoOutput,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("frame {0} is not in the manifest")]
    UnknownFrame(usize),
    #[error("no warp for frames {frame_i} -> {frame_j} ({crop_i:?} -> {crop_j:?})")]
    MissingWarp { frame_i: usize, frame_j: usize, crop_i: CropId, crop_j: CropId },
    #[error("no two-view estimate or failure flag for pair ({0}, {1})")]
    MissingEstimate(usize, usize),
    #[error("estimate and ground truth cover different pairs: {0}")]
    CoverageMismatch(String),
    #[error("two-view estimation failed for pair ({frame_i}, {frame_j}): {source}")]
    EstimationFailed { frame_i: usize, frame_j: usize, source: RobustError },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Sfm(#[from] SfmError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Which rule produced a consecutive motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MotionSource {
    /// Both frames registered in a reconstruction fragment.
    Fragment,
    /// Capture gap above the time-jump threshold: identity, zero translation.
    TimeJumpZero,
    /// Scaled two-view essential-matrix estimate.
    TwoView,
    /// Two-view estimation failed: identity, zero translation.
    FailedZero,
    /// Exact motion from a synthetic scene.
    GroundTruth,
}

impl MotionSource {
    pub const ALL: [MotionSource; 5] = [MotionSource::Fragment, MotionSource::TimeJumpZero, MotionSource::TwoView, MotionSource::FailedZero, MotionSource::GroundTruth];

    pub fn as_str(&self) -> &'static str {
        match self {
            MotionSource::Fragment => "FRAGMENT",
            MotionSource::TimeJumpZero => "TIME_JUMP_ZERO",
            MotionSource::TwoView => "TWO_VIEW",
            MotionSource::FailedZero => "FAILED_ZERO",
            MotionSource::GroundTruth => "GROUND_TRUTH",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s.trim())
    }
}

/// Motion between consecutive frames `frame_j = frame_i + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionRecord {
    pub frame_i: usize,
    pub frame_j: usize,
    pub motion: RelativeMotion,
    pub source: MotionSource,
    pub fragment_id: Option<usize>,
}

impl MotionRecord {
    /// Takes the frames from `motion` and canonicalizes its quaternion.
    pub fn new(motion: RelativeMotion, source: MotionSource, fragment_id: Option<usize>) -> Self {
        let motion = RelativeMotion { rotation: canonical_quaternion(motion.rotation), ..motion };
        Self { frame_i: motion.frame_i, frame_j: motion.frame_j, motion, source, fragment_id }
    }

    /// Identity rotation and zero translation.
    pub fn zero(frame_i: usize, frame_j: usize, source: MotionSource) -> Self {
        Self::new(RelativeMotion::identity(frame_i, frame_j), source, None)
    }

    pub fn key(&self) -> (usize, usize) {
        (self.frame_i, self.frame_j)
    }
}

/// Ground-truth records of a synthetic scene.
pub fn ground_truth_records(scene: &crate::synth::Scene) -> Vec<MotionRecord> {
    scene.ground_truth_motions().into_iter().map(|m| MotionRecord::new(m, MotionSource::GroundTruth, None)).collect()
}
