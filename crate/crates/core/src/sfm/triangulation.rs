use nalgebra::{DMatrix, Vector2, Vector3};

use super::{intrinsics_of, Fragment, SfmConfig, Track};
use crate::geom::{ray_angle, CameraIntrinsics, Pose};

/// Linear triangulation from two or more views. `views` pairs each pose
/// with the observation in normalized image coordinates.
pub fn triangulate_multiview(views: &[(Pose, Vector2<f64>)]) -> Option<Vector3<f64>> {
    if views.len() < 2 {
        return None;
    }
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (k, (pose, x)) in views.iter().enumerate() {
        let r = pose.rotation_matrix();
        let t = pose.translation;
        let row = |i: usize| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]];
        let (p1, p2, p3) = (row(0), row(1), row(2));
        for c in 0..4 {
            a[(2 * k, c)] = x.x * p3[c] - p1[c];
            a[(2 * k + 1, c)] = x.y * p3[c] - p2[c];
        }
    }
    // Row scaling by the largest entry keeps the system well conditioned.
    for mut row in a.row_iter_mut() {
        let m = row.amax();
        if m > 0.0 {
            row /= m;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd.singular_values.argmin();
    let h = v_t.row(min_idx);
    if h[3].abs() < 1e-14 * h.norm() {
        return None;
    }
    let x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Largest angle (rad) between rays from any two camera centers to `x`.
pub fn max_ray_angle(centers: &[Vector3<f64>], x: &Vector3<f64>) -> f64 {
    let mut best = 0.0f64;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            best = best.max(ray_angle(&(x - centers[a]), &(x - centers[b])));
        }
    }
    best
}

/// Whether `x` passes the reprojection, cheirality and angle gates for all
/// observations of `track` in registered frames.
pub(crate) fn point_passes_gates(fragment: &Fragment, track: &Track, x: &Vector3<f64>, intrinsics: &[CameraIntrinsics], cfg: &SfmConfig) -> bool {
    let mut centers = Vec::new();
    for obs in &track.observations {
        let Some(pose) = fragment.poses.get(&obs.frame) else { continue };
        let Ok(k) = intrinsics_of(intrinsics, obs.frame) else { return false };
        let xc = pose.transform(x);
        let Ok(px) = k.project_camera_point(&xc) else { return false };
        if (px - obs.pixel()).norm() > cfg.max_reprojection_px {
            return false;
        }
        centers.push(pose.center());
    }
    centers.len() >= 2 && max_ray_angle(&centers, x) >= cfg.min_triangulation_angle_deg.to_radians()
}

/// Triangulates every track with at least two registered observations and
/// no point yet; points failing a gate stay absent. Returns how many points
/// were added.
pub fn triangulate_tracks(fragment: &mut Fragment, tracks: &[Track], intrinsics: &[CameraIntrinsics], cfg: &SfmConfig) -> usize {
    let mut added = 0;
    for (id, track) in tracks.iter().enumerate() {
        if fragment.points.contains_key(&id) {
            continue;
        }
        let views: Vec<(Pose, Vector2<f64>)> = track
            .observations
            .iter()
            .filter_map(|o| {
                let pose = fragment.poses.get(&o.frame)?;
                let k = intrinsics_of(intrinsics, o.frame).ok()?;
                Some((*pose, k.normalize(o.pixel())))
            })
            .collect();
        if views.len() < 2 {
            continue;
        }
        let Some(x) = triangulate_multiview(&views) else { continue };
        if point_passes_gates(fragment, track, &x, intrinsics, cfg) {
            fragment.points.insert(id, x);
            added += 1;
        }
    }
    added
}

/// Drops points that no longer pass the gates; returns how many were removed.
pub(crate) fn filter_points(fragment: &mut Fragment, tracks: &[Track], intrinsics: &[CameraIntrinsics], cfg: &SfmConfig) -> usize {
    let bad: Vec<usize> = fragment
        .points
        .iter()
        .filter(|(id, x)| !point_passes_gates(fragment, &tracks[**id], x, intrinsics, cfg))
        .map(|(id, _)| *id)
        .collect();
    for id in &bad {
        fragment.points.remove(id);
    }
    bad.len()
}
