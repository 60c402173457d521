//! Matcher stand-ins rendered from the ground-truth scene: keypoints, dense
//! warps and global embeddings.

use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::city::Surface;
use super::scene::Scene;
use crate::matching::{CropId, CropRect, DenseWarp, Keypoint, KeypointSet};
use crate::retrieval::Embedding;

/// Fraction of the image height hidden by the ego vehicle.
pub const EGO_FRACTION: f64 = 0.2;
/// Width of the certainty ramp at the destination crop border (px).
const EDGE_RAMP_PX: f64 = 8.0;
/// Certainty of cells without covisible geometry is drawn from `[0, BACKGROUND)`.
const BACKGROUND_CERTAINTY: f64 = 0.04;
const EMBEDDING_FREQUENCIES: usize = 32;
const HEADING_WEIGHT: f64 = 0.5;

fn stream_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ b.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Keypoints of one frame with the landmark behind each (`None` for clutter
/// and ego-vehicle detections).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedKeypoints {
    pub keypoints: KeypointSet,
    pub landmarks: Vec<Option<usize>>,
}

impl Scene {
    /// FULL crop of a frame: the image minus the ego vehicle at the bottom.
    pub fn full_crop(&self, frame: usize) -> CropRect {
        let k = &self.intrinsics;
        let h = (k.height as f64 * (1.0 - EGO_FRACTION)).round() as u32;
        CropRect::full(frame, 0, 0, k.width, h)
    }

    pub fn crop(&self, frame: usize, id: CropId) -> CropRect {
        self.full_crop(frame).sub_crop(id)
    }

    pub fn keypoints(&self, frame: usize) -> RenderedKeypoints {
        let noise = &self.config.noise;
        let k = &self.intrinsics;
        let (w, h) = (k.width as f64, k.height as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, 1, frame as u64, 0));
        let jitter = Normal::new(0.0, noise.keypoint_px.max(0.0)).unwrap();
        let mut items: Vec<(Keypoint, Option<usize>)> = Vec::new();
        let visible = self.visible_landmarks(frame);
        for (l, px) in &visible {
            let x = (px.x + jitter.sample(&mut rng)).clamp(0.0, w);
            let y = (px.y + jitter.sample(&mut rng)).clamp(0.0, h);
            items.push((Keypoint { x, y, score: rng.random_range(0.5..1.0) }, Some(*l)));
        }
        let clutter = (visible.len() as f64 * noise.keypoint_outlier_fraction).round() as usize;
        for _ in 0..clutter {
            let kp = Keypoint { x: rng.random_range(0.0..w), y: rng.random_range(0.0..h * (1.0 - EGO_FRACTION)), score: rng.random_range(0.0..0.6) };
            items.push((kp, None));
        }
        // The ego vehicle carries the same detections in every frame.
        let mut ego_rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, 2, 0, 0));
        for _ in 0..self.config.ego_keypoints {
            let x = ego_rng.random_range(0.1 * w..0.9 * w);
            let y = ego_rng.random_range(h * (1.0 - EGO_FRACTION) + 2.0..h - 2.0);
            items.push((Keypoint { x: x + jitter.sample(&mut rng) * 0.2, y, score: 0.9 }, None));
        }
        for i in (1..items.len()).rev() {
            items.swap(i, rng.random_range(0..=i));
        }
        // Stored as f32 on disk; quantize so files round-trip exactly.
        let (points, landmarks) = items
            .into_iter()
            .map(|(kp, l)| (Keypoint { x: kp.x as f32 as f64, y: kp.y as f32 as f64, score: kp.score as f32 as f64 }, l))
            .unzip();
        RenderedKeypoints { keypoints: KeypointSet::new(frame, k.width, k.height, points), landmarks }
    }

    fn ray_through(&self, frame: usize, px: Vector2<f64>) -> Vector3<f64> {
        let n = self.intrinsics.normalize(px);
        let pose = &self.frames[frame].pose;
        (pose.rotation.inverse() * Vector3::new(n.x, n.y, 1.0)).normalize()
    }

    /// Dense warp from crop `ca` of frame `i` to crop `cb` of frame `j`.
    pub fn warp(&self, i: usize, j: usize, ca: CropId, cb: CropId) -> DenseWarp {
        let cfg = &self.config;
        let (src, dst) = (self.crop(i, ca), self.crop(j, cb));
        let g = cfg.warp_grid;
        let range = cfg.max_range_m;
        let (ci, cj) = (self.frames[i].center, self.frames[j].center);
        let pose_j = &self.frames[j].pose;

        // Geometry of every node as seen from frame i.
        let mut nodes: Vec<Option<(Surface, Point3<f64>)>> = Vec::with_capacity(g * g);
        for r in 0..g {
            for c in 0..g {
                let p = Vector2::new((c as f64 + 0.5) * src.w as f64 / g as f64, (r as f64 + 0.5) * src.h as f64 / g as f64) + src.offset();
                let dir = self.ray_through(i, p);
                nodes.push(cfg.city.cast(&ci, &dir, range).map(|hit| (hit.surface, hit.point)));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 3, i as u64, ((j as u64) << 4) | ((ca as u64) << 2) | cb as u64));
        let field = NoiseField::new(cfg.seed, i, j, cfg.noise.warp_px);
        let surface_at = |r: isize, c: isize| -> Option<Surface> {
            if r < 0 || c < 0 || r >= g as isize || c >= g as isize {
                return None;
            }
            nodes[r as usize * g + c as usize].map(|(s, _)| s)
        };
        let mut data = Vec::with_capacity(g * g);
        for r in 0..g {
            for c in 0..g {
                let background = rng.random_range(0.0..BACKGROUND_CERTAINTY);
                let own = Vector2::new((c as f64 + 0.5) / g as f64, (r as f64 + 0.5) / g as f64);
                let mut cell = (own, background);
                if let Some((surface, x)) = nodes[r * g + c] {
                    let xc = pose_j.transform(&x.coords);
                    if xc.z > 0.5 {
                        let q = self.intrinsics.project_camera_point(&xc).expect("positive depth");
                        let local = q + field.at(q) - dst.offset();
                        let target = Vector2::new(local.x / dst.w as f64, local.y / dst.h as f64);
                        let edge = local.x.min(dst.w as f64 - local.x).min(local.y).min(dst.h as f64 - (q - dst.offset()).y);
                        let continuous = (-1..=1).all(|dr| (-1..=1).all(|dc| surface_at(r as isize + dr, c as isize + dc) == Some(surface)));
                        let covisible = (x - cj).norm() <= range && cfg.city.visible(&cj, &x);
                        let certainty = if continuous && covisible && edge > 0.0 { (edge / EDGE_RAMP_PX).min(1.0).max(background) } else { background };
                        cell = (target, certainty);
                    }
                }
                if cfg.noise.warp_outlier_fraction > 0.0 && rng.random_bool(cfg.noise.warp_outlier_fraction.min(1.0)) {
                    cell = (Vector2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)), rng.random_range(0.2..1.0));
                }
                let (t, cert) = cell;
                data.push([t.x.clamp(0.0, 1.0) as f32, t.y.clamp(0.0, 1.0) as f32, cert as f32]);
            }
        }
        DenseWarp::new(src, dst, g, g, data).expect("rendered warp is valid")
    }

    /// Global descriptor: smooth positional features, a heading term, the
    /// session's appearance shift and small noise.
    pub fn embedding(&self, frame: usize) -> Embedding {
        let f = &self.frames[frame];
        let mut basis_rng = ChaCha8Rng::seed_from_u64(0xE3B0_C442_98FC_1C14);
        let mut v: Vec<f64> = Vec::with_capacity(2 * EMBEDDING_FREQUENCIES + 2);
        let scale = (EMBEDDING_FREQUENCIES as f64).sqrt();
        for _ in 0..EMBEDDING_FREQUENCIES {
            let wavelength = (80f64.ln() + basis_rng.random_range(0.0..1.0) * (10f64).ln()).exp();
            let angle: f64 = basis_rng.random_range(0.0..std::f64::consts::TAU);
            let phase: f64 = basis_rng.random_range(0.0..std::f64::consts::TAU);
            let omega = Vector2::new(angle.cos(), angle.sin()) * (std::f64::consts::TAU / wavelength);
            let arg = omega.dot(&Vector2::new(f.center.x, f.center.y)) + phase;
            v.push(arg.cos() / scale);
            v.push(arg.sin() / scale);
        }
        v.push(HEADING_WEIGHT * f.heading.cos());
        v.push(HEADING_WEIGHT * f.heading.sin());
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);

        if f.appearance_shift != 0.0 {
            let mut shift_rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, 4, f.session as u64, 0));
            let dir: Vec<f64> = (0..v.len()).map(|_| shift_rng.random_range(-1.0..1.0)).collect();
            let dn = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().zip(&dir).for_each(|(x, d)| *x += f.appearance_shift * d / dn);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, 5, frame as u64, 0));
        let noise = Normal::new(0.0, self.config.noise.embedding_sigma.max(0.0)).unwrap();
        Embedding::new(frame, v.iter().map(|x| (x + noise.sample(&mut rng)) as f32).collect())
    }

    /// Frame pairs that see the same street twice, one per revisiting frame.
    pub fn revisit_pairs(&self) -> Vec<(usize, usize)> {
        self.config.revisits.iter().flat_map(|r| (0..r.length).map(move |k| (r.revisited_start + k, r.start + k))).collect()
    }
}

/// Smooth, spatially correlated displacement in image pixels.
struct NoiseField {
    omega: [Vector2<f64>; 2],
    phase: [f64; 2],
    amplitude: f64,
}

impl NoiseField {
    fn new(seed: u64, i: usize, j: usize, rms_px: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 6, i as u64, j as u64));
        let mut wave = || {
            let wavelength = rng.random_range(250.0..600.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (Vector2::new(angle.cos(), angle.sin()) * (std::f64::consts::TAU / wavelength), rng.random_range(0.0..std::f64::consts::TAU))
        };
        let (w0, p0) = wave();
        let (w1, p1) = wave();
        Self { omega: [w0, w1], phase: [p0, p1], amplitude: rms_px * std::f64::consts::SQRT_2 }
    }

    fn at(&self, q: Vector2<f64>) -> Vector2<f64> {
        if self.amplitude == 0.0 {
            return Vector2::zeros();
        }
        Vector2::new((self.omega[0].dot(&q) + self.phase[0]).sin(), (self.omega[1].dot(&q) + self.phase[1]).sin()) * self.amplitude
    }
}
