use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FrameManifest, MotionRecord, MotionSource, PipelineError};
use crate::geom::{relative_motion_indexed, RelativeMotion};
use crate::sfm::Fragment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyConfig {
    /// Median consecutive translation imposed on fragments and used for
    /// every two-view motion (meters).
    pub target_median_translation_m: f64,
    /// Capture gaps above this many seconds have no visual overlap.
    pub time_jump_s: f64,
    /// Direction of travel in camera coordinates. The camera looks backwards,
    /// so forward travel moves it along its own -z.
    pub forward_axis: [f64; 3],
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self { target_median_translation_m: 10.0, time_jump_s: 60.0, forward_axis: [0.0, 0.0, -1.0] }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.target_median_translation_m > 0.0 && self.target_median_translation_m.is_finite()) {
            return Err(PipelineError::InvalidConfig("target_median_translation_m must be positive".into()));
        }
        if !(self.time_jump_s > 0.0) {
            return Err(PipelineError::InvalidConfig("time_jump_s must be positive".into()));
        }
        if (Vector3::from(self.forward_axis).norm() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidConfig("forward_axis must be a unit vector".into()));
        }
        Ok(())
    }

    pub fn forward_axis(&self) -> Vector3<f64> {
        Vector3::from(self.forward_axis)
    }
}

/// Orients the translation so that camera j lies ahead of camera i along
/// `axis`. The flag is set when the direction is perpendicular to the axis,
/// in which case the motion is returned unchanged.
pub fn forward_sign(motion: &RelativeMotion, axis: &Vector3<f64>) -> (RelativeMotion, bool) {
    let center_j = -(motion.rotation.inverse() * motion.translation);
    let d = center_j.dot(axis);
    if d < 0.0 {
        (motion.with_translation(-motion.translation), false)
    } else {
        (*motion, d == 0.0)
    }
}

/// `target / median` of the translation norms between registered
/// consecutive frames of the fragment; `None` without such pairs.
pub fn fragment_scale(fragment: &Fragment, target: f64) -> Option<f64> {
    let mut norms: Vec<f64> = fragment
        .poses
        .iter()
        .filter_map(|(f, p)| fragment.poses.get(&(f + 1)).map(|q| relative_motion_indexed(p, q, *f, f + 1).translation.norm()))
        .collect();
    if norms.is_empty() {
        return None;
    }
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    let median = if n % 2 == 1 { norms[n / 2] } else { 0.5 * (norms[n / 2 - 1] + norms[n / 2]) };
    (median > 0.0).then(|| target / median)
}

/// Motion for every consecutive pair, by the first rule that applies:
///
/// 1. both frames in a fragment: motion from the largest such fragment,
///    scaled to the target median;
/// 2. capture gap above `time_jump_s`: zero motion;
/// 3. the two-view estimate, oriented forward and scaled to the target
///    length. A `None` estimate marks a failed estimation and gives zero
///    motion tagged [`MotionSource::FailedZero`].
pub fn assemble(
    manifest: &FrameManifest,
    fragments: &[Fragment],
    two_view: &BTreeMap<(usize, usize), Option<RelativeMotion>>,
    cfg: &AssemblyConfig,
) -> Result<Vec<MotionRecord>, PipelineError> {
    cfg.validate()?;
    let scales: Vec<Option<f64>> = fragments.iter().map(|f| fragment_scale(f, cfg.target_median_translation_m)).collect();
    let axis = cfg.forward_axis();
    let mut out = Vec::with_capacity(manifest.len().saturating_sub(1));
    for (i, j) in manifest.consecutive_pairs() {
        let covering = fragments
            .iter()
            .zip(&scales)
            .filter(|(f, _)| f.contains(i) && f.contains(j))
            .min_by(|(a, _), (b, _)| b.frame_count().cmp(&a.frame_count()).then(a.fragment_id.cmp(&b.fragment_id)));
        if let Some((f, Some(s))) = covering {
            let m = relative_motion_indexed(&f.poses[&i], &f.poses[&j], i, j);
            out.push(MotionRecord::new(m.with_translation(m.translation * *s), MotionSource::Fragment, Some(f.fragment_id)));
            continue;
        }
        if manifest.frames[j].timestamp - manifest.frames[i].timestamp > cfg.time_jump_s {
            out.push(MotionRecord::zero(i, j, MotionSource::TimeJumpZero));
            continue;
        }
        match two_view.get(&(i, j)) {
            None => return Err(PipelineError::MissingEstimate(i, j)),
            Some(None) => out.push(MotionRecord::zero(i, j, MotionSource::FailedZero)),
            Some(Some(m)) => {
                let (oriented, _) = forward_sign(m, &axis);
                let m = RelativeMotion { frame_i: i, frame_j: j, ..oriented.with_translation_norm(cfg.target_median_translation_m) };
                out.push(MotionRecord::new(m, MotionSource::TwoView, None));
            }
        }
    }
    Ok(out)
}
