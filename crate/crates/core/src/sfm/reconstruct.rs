use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};

use super::ba::bundle_adjust;
use super::pnp::register_image_with_prior;
use super::triangulation::{filter_points, triangulate_tracks};
use super::{build_tracks, intrinsics_of, Fragment, SfmConfig, SfmError, Track};
use crate::geom::{ray_angle, triangulate, CameraIntrinsics, Correspondence, Pose, RelativeMotion};
use crate::matching::MatchSet;

/// Verified two-view geometry of one frame pair: the robust motion estimate
/// (unit translation) and the matches consistent with it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGeometry {
    pub motion: RelativeMotion,
    pub inliers: MatchSet,
}

impl PairGeometry {
    pub fn frames(&self) -> (usize, usize) {
        (self.inliers.frame_i, self.inliers.frame_j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmInput {
    /// Intrinsics indexed by frame.
    pub intrinsics: Vec<CameraIntrinsics>,
    pub pairs: Vec<PairGeometry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitCandidate {
    pub frame_i: usize,
    pub frame_j: usize,
    pub inliers: usize,
    pub median_angle_deg: f64,
}

/// Among candidates with enough inliers and a median triangulation angle of
/// at least `init_min_angle_deg`, the one with most inliers; ties go to the
/// smaller `(i, j)`.
pub fn select_init_pair(candidates: &[InitCandidate], cfg: &SfmConfig) -> Result<(usize, usize), SfmError> {
    candidates
        .iter()
        .filter(|c| c.inliers >= cfg.init_min_inliers && c.median_angle_deg >= cfg.init_min_angle_deg)
        .min_by(|a, b| b.inliers.cmp(&a.inliers).then((a.frame_i, a.frame_j).cmp(&(b.frame_i, b.frame_j))))
        .map(|c| (c.frame_i, c.frame_j))
        .ok_or(SfmError::NoInitPair)
}

/// Median angle (degrees) between the two viewing rays of the triangulated
/// correspondences; `corrs` are in normalized image coordinates.
pub fn median_triangulation_angle(motion: &RelativeMotion, corrs: &[Correspondence]) -> f64 {
    if motion.translation.norm() < 1e-12 {
        return 0.0;
    }
    let center_j = -(motion.rotation.inverse() * motion.translation);
    let mut angles: Vec<f64> = corrs
        .iter()
        .filter_map(|c| triangulate(motion, c).ok())
        .filter(|t| t.depth_i > 0.0 && t.depth_j > 0.0)
        .map(|t| ray_angle(&t.point, &(t.point - center_j)).to_degrees())
        .collect();
    if angles.is_empty() {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    let n = angles.len();
    if n % 2 == 1 {
        angles[n / 2]
    } else {
        0.5 * (angles[n / 2 - 1] + angles[n / 2])
    }
}

fn candidate_of(pair: &PairGeometry, intrinsics: &[CameraIntrinsics]) -> Result<InitCandidate, SfmError> {
    let (i, j) = pair.frames();
    let (ki, kj) = (intrinsics_of(intrinsics, i)?, intrinsics_of(intrinsics, j)?);
    let corrs: Vec<Correspondence> = pair
        .inliers
        .matches
        .iter()
        .map(|m| Correspondence { p1: ki.normalize(m.point_i()), p2: kj.normalize(m.point_j()) })
        .collect();
    Ok(InitCandidate { frame_i: i, frame_j: j, inliers: pair.inliers.len(), median_angle_deg: median_triangulation_angle(&pair.motion, &corrs) })
}

struct Grower<'a> {
    tracks: &'a [Track],
    by_frame: BTreeMap<usize, Vec<usize>>,
    intrinsics: &'a [CameraIntrinsics],
    cfg: &'a SfmConfig,
}

impl Grower<'_> {
    fn adjust(&self, fragment: &mut Fragment) {
        match bundle_adjust(fragment, self.tracks, self.intrinsics, self.cfg) {
            Ok(_) | Err(SfmError::NothingToAdjust) => {}
            Err(e) => log::warn!("fragment bundle adjustment failed: {e}"),
        }
        filter_points(fragment, self.tracks, self.intrinsics, self.cfg);
    }

    /// 2D-3D correspondences of `frame` against the fragment's points.
    fn correspondences(&self, fragment: &Fragment, frame: usize) -> Vec<(Vector3<f64>, Vector2<f64>)> {
        self.by_frame
            .get(&frame)
            .into_iter()
            .flatten()
            .filter_map(|t| {
                let x = fragment.points.get(t)?;
                Some((*x, self.tracks[*t].observation_in(frame)?.pixel()))
            })
            .collect()
    }

    fn next_frame(&self, fragment: &Fragment, blocked: &BTreeSet<usize>) -> Option<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for id in fragment.points.keys() {
            for o in &self.tracks[*id].observations {
                if !fragment.contains(o.frame) && !blocked.contains(&o.frame) {
                    *counts.entry(o.frame).or_default() += 1;
                }
            }
        }
        counts
            .into_iter()
            .filter(|(_, c)| *c >= self.cfg.min_registration_correspondences)
            .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)))
            .map(|(f, _)| f)
    }

    fn bootstrap(&self, pair: &PairGeometry) -> Option<Fragment> {
        let (i, j) = pair.frames();
        let mut fragment = Fragment { registration_order: vec![i, j], ..Default::default() };
        fragment.poses.insert(i, Pose::identity());
        fragment.poses.insert(j, pair.motion.with_translation_norm(1.0).as_pose());
        triangulate_tracks(&mut fragment, self.tracks, self.intrinsics, self.cfg);
        if fragment.points.len() < self.cfg.init_min_points {
            return None;
        }
        self.adjust(&mut fragment);
        (fragment.points.len() >= self.cfg.init_min_points).then_some(fragment)
    }

    fn grow(&self, fragment: &mut Fragment) {
        let mut blocked = BTreeSet::new();
        let mut since_ba = 0;
        while let Some(frame) = self.next_frame(fragment, &blocked) {
            let corrs = self.correspondences(fragment, frame);
            let Ok(k) = intrinsics_of(self.intrinsics, frame) else {
                blocked.insert(frame);
                continue;
            };
            let prior = predicted_pose(fragment, frame);
            match register_image_with_prior(frame, &corrs, k, prior.as_ref(), self.cfg) {
                Ok((pose, _)) => {
                    fragment.poses.insert(frame, pose);
                    fragment.registration_order.push(frame);
                    triangulate_tracks(fragment, self.tracks, self.intrinsics, self.cfg);
                    blocked.clear();
                    since_ba += 1;
                    if since_ba >= self.cfg.ba_every {
                        self.adjust(fragment);
                        since_ba = 0;
                    }
                }
                Err(e) => {
                    log::debug!("frame {frame} not registered: {e}");
                    blocked.insert(frame);
                }
            }
        }
        self.adjust(fragment);
        let before = fragment.points.len();
        filter_points(fragment, self.tracks, self.intrinsics, self.cfg);
        if fragment.points.len() < before {
            self.adjust(fragment);
        }
    }
}

/// Constant-velocity guess for `frame` from the two registered frames on
/// either side of it, or the pose of the nearest registered frame.
fn predicted_pose(fragment: &Fragment, frame: usize) -> Option<Pose> {
    let pose = |f: Option<usize>| f.and_then(|f| fragment.poses.get(&f));
    for (near, far) in [(frame.checked_sub(1), frame.checked_sub(2)), (frame.checked_add(1), frame.checked_add(2))] {
        if let (Some(a), Some(b)) = (pose(near), pose(far)) {
            return Some(a.compose(&b.inverse()).compose(a));
        }
    }
    fragment.poses.iter().min_by_key(|(f, _)| f.abs_diff(frame)).map(|(_, p)| *p)
}

/// Incremental reconstruction. Fragments are started from unused frames
/// until no initial pair qualifies, and are returned largest first.
pub fn reconstruct(input: &SfmInput, cfg: &SfmConfig) -> Result<Vec<Fragment>, SfmError> {
    cfg.validate()?;
    let match_sets: Vec<MatchSet> = input.pairs.iter().map(|p| p.inliers.clone()).collect();
    let tracks = build_tracks(&match_sets);
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, t) in tracks.iter().enumerate() {
        for o in &t.observations {
            by_frame.entry(o.frame).or_default().push(id);
        }
    }
    let candidates: Vec<InitCandidate> = input.pairs.iter().map(|p| candidate_of(p, &input.intrinsics)).collect::<Result<_, _>>()?;
    let grower = Grower { tracks: &tracks, by_frame, intrinsics: &input.intrinsics, cfg };

    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut failed: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut fragments = Vec::new();
    loop {
        let eligible: Vec<InitCandidate> = candidates
            .iter()
            .filter(|c| !used.contains(&c.frame_i) && !used.contains(&c.frame_j) && !failed.contains(&(c.frame_i, c.frame_j)))
            .copied()
            .collect();
        let Ok(key) = select_init_pair(&eligible, cfg) else { break };
        let pair = input.pairs.iter().find(|p| p.frames() == key).expect("candidate comes from a pair");
        let Some(mut fragment) = grower.bootstrap(pair) else {
            failed.insert(key);
            continue;
        };
        grower.grow(&mut fragment);
        log::info!("fragment with {} frames and {} points from initial pair {:?}", fragment.frame_count(), fragment.points.len(), key);
        used.extend(fragment.poses.keys().copied());
        fragments.push(fragment);
    }
    fragments.sort_by(|a: &Fragment, b: &Fragment| b.frame_count().cmp(&a.frame_count()).then(a.frames().first().cmp(&b.frames().first())));
    for (k, f) in fragments.iter_mut().enumerate() {
        f.fragment_id = k;
    }
    Ok(fragments)
}

/// Tracks of a reconstruction input, in the order [`reconstruct`] indexes them.
pub fn tracks_of(input: &SfmInput) -> Vec<Track> {
    build_tracks(&input.pairs.iter().map(|p| p.inliers.clone()).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(i: usize, j: usize, inliers: usize, angle: f64) -> InitCandidate {
        InitCandidate { frame_i: i, frame_j: j, inliers, median_angle_deg: angle }
    }

    #[test]
    fn angle_gate_comes_before_inlier_count() {
        let cfg = SfmConfig::default();
        assert_eq!(select_init_pair(&[cand(0, 1, 500, 0.5), cand(3, 4, 100, 5.0)], &cfg), Ok((3, 4)));
    }

    #[test]
    fn ties_go_to_smaller_pair() {
        let cfg = SfmConfig::default();
        assert_eq!(select_init_pair(&[cand(5, 6, 80, 3.0), cand(2, 9, 80, 3.0), cand(2, 3, 80, 3.0)], &cfg), Ok((2, 3)));
    }

    #[test]
    fn no_candidate_means_no_init_pair() {
        let cfg = SfmConfig::default();
        assert_eq!(select_init_pair(&[cand(0, 1, 49, 10.0)], &cfg), Err(SfmError::NoInitPair));
        assert_eq!(select_init_pair(&[], &cfg), Err(SfmError::NoInitPair));
    }

    #[test]
    fn median_angle_of_known_geometry() {
        // Baseline 1 along x, one point at depth 1 straight ahead of the midpoint: 2 * atan(0.5).
        let motion = RelativeMotion::new(nalgebra::UnitQuaternion::identity(), Vector3::new(-1.0, 0.0, 0.0), 0, 1);
        let c = Correspondence::new(0.5, 0.0, -0.5, 0.0);
        let expected = 2.0 * 0.5f64.atan().to_degrees();
        assert!((median_triangulation_angle(&motion, &[c]) - expected).abs() < 1e-9);
        assert_eq!(median_triangulation_angle(&motion, &[]), 0.0);
    }
}
