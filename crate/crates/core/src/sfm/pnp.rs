use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ba::reprojection_jacobian;
use super::{SfmConfig, SfmError};
use crate::geom::{CameraIntrinsics, Pose};
use crate::robust::adaptive_trials;

const SAMPLE_SIZE: usize = 6;
const DEGENERACY_RATIO: f64 = 1e-6;
/// Inlier thresholds, in pixels, of the coarse-to-fine refinement that
/// starts from a predicted pose.
const PRIOR_SCHEDULE: [f64; 4] = [f64::INFINITY, 64.0, 16.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpConfig {
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_iterations: usize,
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self { confidence: 0.9999, max_iterations: 2000, min_iterations: 50, refine_iterations: 20, seed: 0 }
    }
}

impl PnpConfig {
    pub fn validate(&self) -> Result<(), SfmError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SfmError::InvalidConfig("pnp confidence must lie in (0, 1)"));
        }
        if self.max_iterations == 0 || self.min_iterations > self.max_iterations {
            return Err(SfmError::InvalidConfig("pnp iteration bounds are inconsistent"));
        }
        Ok(())
    }
}

/// Linear pose from at least six world points and their normalized image
/// coordinates. The rotation is the nearest proper rotation to the left
/// 3x3 block; the overall sign puts the majority of points in front.
pub fn dlt_pose(corrs: &[(Vector3<f64>, Vector2<f64>)]) -> Option<Pose> {
    if corrs.len() < SAMPLE_SIZE {
        return None;
    }
    let n = corrs.len() as f64;
    let centroid = corrs.iter().map(|(x, _)| x).sum::<Vector3<f64>>() / n;
    let spread = corrs.iter().map(|(x, _)| (x - centroid).norm()).sum::<f64>() / n;
    if spread < 1e-12 {
        return None;
    }
    let scale = 3f64.sqrt() / spread;
    let mut a = DMatrix::zeros(2 * corrs.len(), 12);
    for (k, (x, m)) in corrs.iter().enumerate() {
        let xn = (x - centroid) * scale;
        let h = [xn.x, xn.y, xn.z, 1.0];
        for c in 0..4 {
            a[(2 * k, c)] = h[c];
            a[(2 * k, 8 + c)] = -m.x * h[c];
            a[(2 * k + 1, 4 + c)] = h[c];
            a[(2 * k + 1, 8 + c)] = -m.y * h[c];
        }
    }
    // Thin SVD needs at least as many rows as columns.
    let svd = if a.nrows() >= 12 { a.svd(false, true) } else { (a.transpose() * &a).svd(false, true) };
    let v_t = svd.v_t?;
    let mut sorted: Vec<f64> = svd.singular_values.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    // Coplanar or otherwise degenerate samples leave a multi-dimensional
    // null space and no unique projection matrix.
    if !(sorted[1] > DEGENERACY_RATIO * sorted[sorted.len() - 1]) {
        return None;
    }
    let (min_idx, _) = svd.singular_values.argmin();
    let p = v_t.row(min_idx);
    let pn = Matrix3x4::from_iterator((0..12).map(|k| p[(k % 3) * 4 + k / 3]));
    // Undo the point normalization: P = Pn * [s I, -s c; 0, 1].
    let m = pn.fixed_view::<3, 3>(0, 0) * scale;
    let p4 = pn.column(3) - m * centroid;
    let mut full = Matrix3x4::zeros();
    full.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    full.set_column(3, &p4);

    let in_front = corrs.iter().filter(|(x, _)| (full.fixed_view::<1, 3>(2, 0) * x)[0] + full[(2, 3)] > 0.0).count();
    if 2 * in_front < corrs.len() {
        full = -full;
    }
    let m: Matrix3<f64> = full.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let r = u * v_t;
    if r.determinant() < 0.0 {
        return None;
    }
    let s = svd.singular_values.mean();
    if !(s > 1e-12) {
        return None;
    }
    let t = full.column(3) / s;
    Some(Pose::from_matrix(&r, t))
}

fn reprojection_error(k: &CameraIntrinsics, pose: &Pose, x: &Vector3<f64>, px: &Vector2<f64>) -> Option<f64> {
    let xc = pose.transform(x);
    k.project_camera_point(&xc).ok().map(|p| (p - px).norm())
}

/// Levenberg-Marquardt on the six pose parameters minimizing squared pixel
/// reprojection error.
pub fn refine_pose(pose: &Pose, corrs: &[(Vector3<f64>, Vector2<f64>)], k: &CameraIntrinsics, iterations: usize) -> Pose {
    let cost_of = |p: &Pose| -> Option<f64> {
        let mut c = 0.0;
        for (x, px) in corrs {
            let xc = p.transform(x);
            c += (k.project_camera_point(&xc).ok()? - px).norm_squared();
        }
        Some(c)
    };
    let mut current = *pose;
    let Some(mut cost) = cost_of(&current) else { return current };
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (x, px) in corrs {
            let Ok(j) = reprojection_jacobian(k, &current, x, px) else { return current };
            let mut jc = nalgebra::Matrix2x6::zeros();
            jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&j.d_rotation);
            jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&j.d_translation);
            h += jc.transpose() * jc;
            g += jc.transpose() * j.residual;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(step[0], step[1], step[2])) * current.rotation,
                current.translation + Vector3::new(step[3], step[4], step[5]),
            );
            match cost_of(&candidate) {
                Some(c) if c < cost => {
                    let done = cost - c < 1e-12 * cost.max(1e-300);
                    current = candidate;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = !done;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    current
}

fn inliers_of(k: &CameraIntrinsics, pose: &Pose, corrs: &[(Vector3<f64>, Vector2<f64>)], threshold: f64) -> Vec<bool> {
    corrs.iter().map(|(x, px)| reprojection_error(k, pose, x, px).is_some_and(|e| e <= threshold)).collect()
}

/// Pose of `frame` from 2D-3D correspondences `(world point, pixel)`:
/// RANSAC over six-point DLT, then nonlinear refinement on the inliers.
/// Returns the pose and the inlier mask.
pub fn register_image(frame: usize, corrs: &[(Vector3<f64>, Vector2<f64>)], k: &CameraIntrinsics, cfg: &SfmConfig) -> Result<(Pose, Vec<bool>), SfmError> {
    register_image_with_prior(frame, corrs, k, None, cfg)
}

/// Refines a predicted pose against all correspondences while shrinking the
/// inlier threshold, so a rough guess can still converge with outliers present.
fn refine_from_prior(prior: &Pose, corrs: &[(Vector3<f64>, Vector2<f64>)], k: &CameraIntrinsics, cfg: &SfmConfig) -> Option<Pose> {
    let mut pose = *prior;
    for threshold in PRIOR_SCHEDULE.iter().map(|t| t.max(cfg.max_reprojection_px)) {
        let subset: Vec<(Vector3<f64>, Vector2<f64>)> =
            corrs.iter().zip(inliers_of(k, &pose, corrs, threshold)).filter(|(_, m)| *m).map(|(c, _)| *c).collect();
        if subset.len() < SAMPLE_SIZE {
            return None;
        }
        pose = refine_pose(&pose, &subset, k, cfg.pnp.refine_iterations);
    }
    Some(pose)
}

/// Like [`register_image`], with an optional predicted pose that competes
/// with the sampled hypotheses after its own refinement. Scenes made of a
/// few planar facades often yield coplanar samples, which the linear solver
/// cannot use; the prediction keeps such frames registrable.
pub fn register_image_with_prior(
    frame: usize,
    corrs: &[(Vector3<f64>, Vector2<f64>)],
    k: &CameraIntrinsics,
    prior: Option<&Pose>,
    cfg: &SfmConfig,
) -> Result<(Pose, Vec<bool>), SfmError> {
    if corrs.len() < SAMPLE_SIZE {
        return Err(SfmError::InsufficientCorrespondences { needed: SAMPLE_SIZE, got: corrs.len() });
    }
    let pnp = &cfg.pnp;
    let threshold = cfg.max_reprojection_px;
    let normalized: Vec<(Vector3<f64>, Vector2<f64>)> = corrs.iter().map(|(x, px)| (*x, k.normalize(*px))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(pnp.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut best: Option<(Pose, usize)> = None;
    let mut needed = pnp.max_iterations;
    if let Some(pose) = prior.and_then(|p| refine_from_prior(p, corrs, k, cfg)) {
        let count = inliers_of(k, &pose, corrs, threshold).iter().filter(|b| **b).count();
        needed = adaptive_trials(count as f64 / corrs.len() as f64, pnp.confidence, SAMPLE_SIZE, pnp.max_iterations);
        best = Some((pose, count));
    }
    let mut iteration = 0;
    while iteration < needed.max(pnp.min_iterations).min(pnp.max_iterations) {
        iteration += 1;
        let idx = sample(&mut rng, corrs.len(), SAMPLE_SIZE);
        let subset: Vec<(Vector3<f64>, Vector2<f64>)> = idx.iter().map(|i| normalized[i]).collect();
        let Some(pose) = dlt_pose(&subset) else { continue };
        let count = inliers_of(k, &pose, corrs, threshold).iter().filter(|b| **b).count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((pose, count));
            needed = adaptive_trials(count as f64 / corrs.len() as f64, pnp.confidence, SAMPLE_SIZE, pnp.max_iterations);
        }
    }
    let Some((mut pose, _)) = best else {
        return Err(SfmError::RegistrationFailed { frame, inliers: 0 });
    };
    let mut mask = inliers_of(k, &pose, corrs, threshold);
    for _ in 0..2 {
        let subset: Vec<(Vector3<f64>, Vector2<f64>)> = corrs.iter().zip(&mask).filter(|(_, m)| **m).map(|(c, _)| *c).collect();
        if subset.len() < SAMPLE_SIZE {
            break;
        }
        let refined = refine_pose(&pose, &subset, k, pnp.refine_iterations);
        let new_mask = inliers_of(k, &refined, corrs, threshold);
        if new_mask.iter().filter(|b| **b).count() < mask.iter().filter(|b| **b).count() {
            break;
        }
        pose = refined;
        mask = new_mask;
    }
    let inliers = mask.iter().filter(|b| **b).count();
    if inliers < SAMPLE_SIZE {
        return Err(SfmError::RegistrationFailed { frame, inliers });
    }
    Ok((pose, mask))
}
