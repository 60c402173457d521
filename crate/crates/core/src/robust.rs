//! Locally-optimized RANSAC over the normalized eight-point solver.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{decompose_essential, eight_point, CameraIntrinsics, Correspondence, EssentialMatrix, GeomError, RelativeMotion};

const SAMPLE_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error("need at least 8 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("no model with at least 8 inliers (best had {0})")]
    NoModelFound(usize),
    #[error("invalid ransac configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Sampson threshold in pixels.
    pub pixel_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_iterations: usize,
    /// Local-optimization refit rounds run on every new best model.
    pub lo_refits: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { pixel_threshold: 1.5, confidence: 0.9999, max_iterations: 10_000, min_iterations: 100, lo_refits: 4, seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RobustError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RobustError::InvalidConfig("confidence must be in (0, 1)"));
        }
        if !(self.pixel_threshold > 0.0) {
            return Err(RobustError::InvalidConfig("pixel_threshold must be positive"));
        }
        if self.min_iterations < 1 || self.max_iterations < self.min_iterations {
            return Err(RobustError::InvalidConfig("need max_iterations >= min_iterations >= 1"));
        }
        Ok(())
    }

    /// Copy with the per-pair seed `seed ^ (i·2²⁰ + j)`, which keeps
    /// results independent of the order pairs are scheduled in.
    pub fn for_pair(&self, frame_i: usize, frame_j: usize) -> Self {
        Self { seed: pair_seed(self.seed, frame_i, frame_j), ..*self }
    }
}

pub fn pair_seed(seed: u64, frame_i: usize, frame_j: usize) -> u64 {
    seed ^ ((frame_i as u64) << 20).wrapping_add(frame_j as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustEstimate {
    /// Unit-norm translation.
    pub motion: RelativeMotion,
    pub essential: EssentialMatrix,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub iterations_run: usize,
}

/// Standard RANSAC stopping rule, clamped to `[1, max_iterations]`.
pub fn adaptive_trials(inlier_ratio: f64, confidence: f64, sample_size: usize, max_iterations: usize) -> usize {
    let max = max_iterations.max(1);
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let good = inlier_ratio.powi(sample_size as i32);
    if good <= 0.0 {
        return max;
    }
    let denom = (-good).ln_1p();
    if denom == 0.0 {
        return max;
    }
    let trials = ((1.0 - confidence).ln() / denom).ceil();
    if !trials.is_finite() || trials >= max as f64 {
        max
    } else {
        (trials as usize).max(1)
    }
}

/// Sampson test against a squared threshold, inlined for the hot loop.
struct Scorer<'a> {
    corrs: &'a [Correspondence],
    threshold_sq: f64,
}

impl Scorer<'_> {
    fn score(&self, e: &EssentialMatrix) -> (Vec<bool>, usize) {
        let m: &Matrix3<f64> = e.matrix();
        let mut count = 0;
        let mask = self
            .corrs
            .iter()
            .map(|c| {
                let x1 = Vector3::new(c.p1.x, c.p1.y, 1.0);
                let x2 = Vector3::new(c.p2.x, c.p2.y, 1.0);
                let ex1 = m * x1;
                let etx2 = m.tr_mul(&x2);
                let r = x2.dot(&ex1);
                let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
                let inlier = den >= 1e-18 && r * r <= self.threshold_sq * den;
                count += inlier as usize;
                inlier
            })
            .collect();
        (mask, count)
    }

    fn inliers(&self, mask: &[bool]) -> Vec<Correspondence> {
        self.corrs.iter().zip(mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect()
    }
}

/// Iterated least-squares refit on the current inliers.
///
/// `corrs` are normalized coordinates and `threshold_sq` the squared Sampson
/// threshold in the same units. Falls back to the input when a refit is
/// degenerate or would lose inliers.
pub fn local_optimize(
    best: &EssentialMatrix,
    corrs: &[Correspondence],
    mask: &[bool],
    threshold_sq: f64,
    lo_refits: usize,
) -> (EssentialMatrix, Vec<bool>) {
    let scorer = Scorer { corrs, threshold_sq };
    let mut cur_e = *best;
    let mut cur_mask = mask.to_vec();
    let mut cur_count = mask.iter().filter(|&&m| m).count();
    for _ in 0..lo_refits {
        if cur_count < SAMPLE_SIZE {
            break;
        }
        let Ok(refit) = eight_point(&scorer.inliers(&cur_mask)) else {
            break;
        };
        let (mask, count) = scorer.score(&refit);
        if count < cur_count {
            break;
        }
        let fixed_point = mask == cur_mask;
        cur_e = refit;
        cur_mask = mask;
        cur_count = count;
        if fixed_point {
            break;
        }
    }
    (cur_e, cur_mask)
}

/// Normalized Sampson threshold for a pixel threshold and two cameras.
pub fn normalized_threshold(pixel_threshold: f64, k1: &CameraIntrinsics, k2: &CameraIntrinsics) -> f64 {
    pixel_threshold / (k1.mean_focal() * k2.mean_focal()).sqrt()
}

/// Robust essential-matrix estimation from pixel correspondences.
pub fn estimate_relative_pose(
    corrs: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RobustEstimate, RobustError> {
    cfg.validate()?;
    let n = corrs.len();
    if n < SAMPLE_SIZE {
        return Err(RobustError::InsufficientCorrespondences(n));
    }
    let normalized: Vec<Correspondence> =
        corrs.iter().map(|c| Correspondence { p1: k1.normalize(c.p1), p2: k2.normalize(c.p2) }).collect();
    let thr = normalized_threshold(cfg.pixel_threshold, k1, k2);
    let threshold_sq = thr * thr;
    let scorer = Scorer { corrs: &normalized, threshold_sq };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(EssentialMatrix, Vec<bool>, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;
    let mut minimal = Vec::with_capacity(SAMPLE_SIZE);
    while iterations < cfg.max_iterations && (iterations < cfg.min_iterations || iterations < needed) {
        iterations += 1;
        minimal.clear();
        minimal.extend(sample(&mut rng, n, SAMPLE_SIZE).iter().map(|i| normalized[i]));
        let Ok(e) = eight_point(&minimal) else {
            continue;
        };
        let (mask, count) = scorer.score(&e);
        let best_count = best.as_ref().map_or(0, |b| b.2);
        if count <= best_count {
            continue;
        }
        let (e, mask, count) = if count >= SAMPLE_SIZE {
            let (lo_e, lo_mask) = local_optimize(&e, &normalized, &mask, threshold_sq, cfg.lo_refits);
            let lo_count = lo_mask.iter().filter(|&&m| m).count();
            (lo_e, lo_mask, lo_count)
        } else {
            (e, mask, count)
        };
        needed = adaptive_trials(count as f64 / n as f64, cfg.confidence, SAMPLE_SIZE, cfg.max_iterations);
        best = Some((e, mask, count));
    }

    let (mut e, mut mask, mut count) = best.unwrap_or((EssentialMatrix::project(&Matrix3::identity()).unwrap(), vec![false; n], 0));
    if count < SAMPLE_SIZE {
        return Err(RobustError::NoModelFound(count));
    }
    if let Ok(refit) = eight_point(&scorer.inliers(&mask)) {
        let (m, c) = scorer.score(&refit);
        if c >= count {
            e = refit;
            mask = m;
            count = c;
        }
    }
    let motion = decompose_essential(&e, &scorer.inliers(&mask))?;
    Ok(RobustEstimate { motion, essential: e, inlier_mask: mask, inlier_count: count, iterations_run: iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_angle_between;
    use crate::synth::two_view::TwoViewScene;

    #[test]
    fn adaptive_trial_counts() {
        assert_eq!(adaptive_trials(1.0, 0.9999, 8, 10_000), 1);
        assert_eq!(adaptive_trials(1.0, 0.5, 8, 10_000), 1);
        assert_eq!(adaptive_trials(0.5, 0.99, 8, 10_000), 1177);
        // ln(1e-4) / ln(1 - 0.9^8) = 16.36...
        assert_eq!(adaptive_trials(0.9, 0.9999, 8, 10_000), 17);
        assert_eq!(adaptive_trials(0.01, 0.9999, 8, 10_000), 10_000);
        assert_eq!(adaptive_trials(0.0, 0.9999, 8, 500), 500);
    }

    #[test]
    fn adaptive_trials_monotone_in_ratio() {
        let mut prev = usize::MAX;
        for k in 1..=100 {
            let t = adaptive_trials(k as f64 / 100.0, 0.999, 8, 1_000_000);
            assert!(t <= prev);
            prev = t;
        }
    }

    #[test]
    fn noiseless_scene_is_recovered_exactly() {
        for seed in 0..10 {
            let scene = TwoViewScene::random(seed, 200, 0.0, 0.0);
            let cfg = RansacConfig { seed, ..Default::default() };
            let est = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &cfg).unwrap();
            assert_eq!(est.inlier_count, 200);
            assert!(rotation_angle_between(&est.motion.rotation, &scene.motion.rotation) < 1e-7);
        }
    }

    #[test]
    fn planted_outliers_are_rejected() {
        let mut clean = 0;
        for seed in 0..100 {
            let scene = TwoViewScene::random(1000 + seed, 200, 0.5, 0.4);
            let cfg = RansacConfig { seed, ..Default::default() };
            let est = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &cfg).unwrap();
            let err = rotation_angle_between(&est.motion.rotation, &scene.motion.rotation);
            let leaked = est.inlier_mask.iter().zip(&scene.is_outlier).any(|(&m, &o)| m && o);
            clean += (err < 5e-3 && !leaked) as usize;
        }
        assert!(clean >= 99, "{clean}");
    }

    #[test]
    fn too_few_correspondences() {
        let scene = TwoViewScene::random(5, 7, 0.0, 0.0);
        let err = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &RansacConfig::default());
        assert_eq!(err, Err(RobustError::InsufficientCorrespondences(7)));
    }

    #[test]
    fn pure_outliers_find_no_model() {
        let scene = TwoViewScene::random(6, 60, 0.0, 1.0);
        let cfg = RansacConfig { max_iterations: 300, ..Default::default() };
        let res = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &cfg);
        assert!(matches!(res, Err(RobustError::NoModelFound(_))), "{res:?}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let scene = TwoViewScene::random(7, 300, 0.5, 0.3);
        let cfg = RansacConfig { seed: 99, ..Default::default() };
        let a = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &cfg).unwrap();
        let b = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_keeps_inlier_count_stable() {
        let scene = TwoViewScene::random(8, 300, 0.5, 0.3);
        let cfg = RansacConfig { seed: 3, ..Default::default() };
        let a = estimate_relative_pose(&scene.correspondences, &scene.k1, &scene.k2, &cfg).unwrap();
        let mut rev = scene.correspondences.clone();
        rev.reverse();
        let b = estimate_relative_pose(&rev, &scene.k1, &scene.k2, &cfg).unwrap();
        let diff = (a.inlier_count as f64 - b.inlier_count as f64).abs();
        assert!(diff <= 0.02 * a.inlier_count as f64);
    }

    fn normalized(scene: &TwoViewScene) -> Vec<Correspondence> {
        scene
            .correspondences
            .iter()
            .map(|c| Correspondence { p1: scene.k1.normalize(c.p1), p2: scene.k2.normalize(c.p2) })
            .collect()
    }

    #[test]
    fn local_optimization_never_loses_inliers() {
        use rand::seq::index::sample;
        for seed in 0..100u64 {
            let scene = TwoViewScene::random(2000 + seed, 200, 0.5, 0.3);
            let corrs = normalized(&scene);
            let thr = normalized_threshold(1.5, &scene.k1, &scene.k2);
            let scorer = Scorer { corrs: &corrs, threshold_sq: thr * thr };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Minimal sample drawn from true inliers so the model is noisy
            // but sensible.
            let inliers: Vec<usize> = (0..corrs.len()).filter(|&i| !scene.is_outlier[i]).collect();
            let pick: Vec<_> = sample(&mut rng, inliers.len(), 8).iter().map(|k| corrs[inliers[k]]).collect();
            let Ok(e) = eight_point(&pick) else { continue };
            let (mask, before) = scorer.score(&e);
            if before < 8 {
                continue;
            }
            let (_, lo_mask) = local_optimize(&e, &corrs, &mask, thr * thr, 4);
            let after = lo_mask.iter().filter(|&&m| m).count();
            assert!(after >= before, "seed {seed}: {after} < {before}");
        }
    }

    #[test]
    fn local_optimization_is_idempotent_at_fixed_point() {
        let scene = TwoViewScene::random(9, 200, 0.5, 0.2);
        let corrs = normalized(&scene);
        let thr = normalized_threshold(1.5, &scene.k1, &scene.k2);
        let e = eight_point(&corrs.iter().zip(&scene.is_outlier).filter(|(_, &o)| !o).map(|(c, _)| *c).collect::<Vec<_>>()).unwrap();
        let (mask, _) = Scorer { corrs: &corrs, threshold_sq: thr * thr }.score(&e);
        let (e1, m1) = local_optimize(&e, &corrs, &mask, thr * thr, 50);
        let (e2, m2) = local_optimize(&e1, &corrs, &m1, thr * thr, 50);
        assert_eq!(e1, e2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn local_optimization_falls_back_on_degenerate_refit() {
        // Eight inliers that all lie on one epipolar plane: the refit is
        // degenerate, so the input comes back untouched.
        let e = EssentialMatrix::project(&Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)).unwrap();
        let mut corrs: Vec<Correspondence> = (0..8).map(|k| Correspondence::new(0.1 * k as f64, 0.0, 0.1 * k as f64 + 0.05, 0.0)).collect();
        corrs.push(Correspondence::new(0.0, 0.5, 0.0, -0.5));
        let mut mask = vec![true; 8];
        mask.push(false);
        let (out_e, out_mask) = local_optimize(&e, &corrs, &mask, 1e-6, 4);
        assert_eq!(out_e, e);
        assert_eq!(out_mask, mask);
    }

    #[test]
    fn config_validation() {
        assert!(RansacConfig { confidence: 1.0, ..Default::default() }.validate().is_err());
        assert!(RansacConfig { pixel_threshold: 0.0, ..Default::default() }.validate().is_err());
        assert!(RansacConfig { min_iterations: 20, max_iterations: 10, ..Default::default() }.validate().is_err());
        assert_eq!(RansacConfig::default().for_pair(3, 4).seed, (3 << 20) + 4);
    }
}
