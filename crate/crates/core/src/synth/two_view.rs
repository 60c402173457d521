//! Random calibrated two-view problems with planted noise and outliers.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{essential_from_motion, relative_motion, sampson_distance, CameraIntrinsics, Correspondence, Pose, RelativeMotion};

#[derive(Debug, Clone)]
pub struct TwoViewScene {
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    /// Camera-1 to camera-2 motion with unit-norm translation.
    pub motion: RelativeMotion,
    /// Pixel correspondences.
    pub correspondences: Vec<Correspondence>,
    /// Points in camera-1 coordinates (`None` for outliers).
    pub points: Vec<Option<Vector3<f64>>>,
    pub is_outlier: Vec<bool>,
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 400.0, 300.0, 800, 600).expect("valid intrinsics")
}

impl TwoViewScene {
    /// `n` correspondences, Gaussian pixel noise `noise_px` on the second
    /// image, and `outlier_fraction` of the entries replaced by uniform
    /// points that violate the true epipolar geometry by at least 10 px.
    /// Outliers are kept 100 px away from both epipoles, where the epipolar
    /// constraint carries no information.
    pub fn random(seed: u64, n: usize, noise_px: f64, outlier_fraction: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = default_intrinsics();
        let rot = UnitQuaternion::from_scaled_axis(Vector3::new(
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.1..0.1),
        ));
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.6..0.6)).normalize();
        let motion = relative_motion(&Pose::identity(), &Pose::new(rot, dir));
        Self::with_motion(&mut rng, k, motion, n, noise_px, outlier_fraction)
    }

    pub fn with_motion(
        rng: &mut ChaCha8Rng,
        k: CameraIntrinsics,
        motion: RelativeMotion,
        n: usize,
        noise_px: f64,
        outlier_fraction: f64,
    ) -> Self {
        let noise = Normal::new(0.0, noise_px.max(0.0)).unwrap();
        let n_out = (n as f64 * outlier_fraction).round() as usize;
        let e = essential_from_motion(&motion).ok();
        let min_px = 10.0 / k.mean_focal();
        // Epipoles in pixels: camera-2 center seen from camera 1 and vice versa.
        let epipole = |d: Vector3<f64>| (d.z.abs() > 1e-9).then(|| k.denormalize(Vector2::new(d.x / d.z, d.y / d.z)));
        let e1 = epipole(-(motion.rotation.inverse() * motion.translation));
        let e2 = epipole(motion.translation);
        let near = |e: Option<Vector2<f64>>, p: Vector2<f64>| e.is_some_and(|e| (e - p).norm() < 100.0);
        let mut correspondences = Vec::with_capacity(n);
        let mut points = Vec::with_capacity(n);
        let mut is_outlier = Vec::with_capacity(n);
        while correspondences.len() < n - n_out {
            let px = Vector2::new(rng.random_range(20.0..(k.width as f64 - 20.0)), rng.random_range(20.0..(k.height as f64 - 20.0)));
            let depth = rng.random_range(2.0..8.0);
            let x = (k.normalize(px) * depth).push(depth);
            let xj = motion.transform(&x);
            let Ok(q) = k.project_camera_point(&xj) else { continue };
            if !k.contains(q) || xj.z < 1.0 {
                continue;
            }
            let q = q + Vector2::new(noise.sample(rng), noise.sample(rng));
            correspondences.push(Correspondence { p1: px, p2: q });
            points.push(Some(x));
            is_outlier.push(false);
        }
        while correspondences.len() < n {
            let p1 = Vector2::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
            let p2 = Vector2::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
            let c = Correspondence { p1, p2 };
            if near(e1, p1) || near(e2, p2) {
                continue;
            }
            if let Some(e) = &e {
                let norm = Correspondence { p1: k.normalize(p1), p2: k.normalize(p2) };
                match sampson_distance(e, &norm) {
                    Ok(d) if d.sqrt() > min_px => {}
                    _ => continue,
                }
            }
            correspondences.push(c);
            points.push(None);
            is_outlier.push(true);
        }
        // Interleave outliers deterministically.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        Self {
            k1: k,
            k2: k,
            motion,
            correspondences: order.iter().map(|&i| correspondences[i]).collect(),
            points: order.iter().map(|&i| points[i]).collect(),
            is_outlier: order.iter().map(|&i| is_outlier[i]).collect(),
        }
    }
}
