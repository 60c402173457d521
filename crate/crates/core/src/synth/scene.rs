//! Ground-truth trajectory and landmarks of a synthetic drive.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::city::{block_seed, City};
use super::SynthError;
use crate::geom::{relative_motion_indexed, CameraIntrinsics, Pose, RelativeMotion};

/// Capture gap before `frame` (seconds). The vehicle is relocated across the
/// gap unless a revisit starts at the same frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeJump {
    pub frame: usize,
    pub gap_s: f64,
}

/// Frames `start..start + length` drive again through the places of frames
/// `revisited_start..revisited_start + length`. `appearance_shift` perturbs
/// the embeddings of the revisiting session (until the next time jump).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Revisit {
    pub start: usize,
    pub length: usize,
    pub revisited_start: usize,
    #[serde(default)]
    pub appearance_shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub keypoint_px: f64,
    /// RMS amplitude of the smooth displacement field added to warps.
    pub warp_px: f64,
    /// Fraction of warp cells replaced by confident random targets.
    pub warp_outlier_fraction: f64,
    /// Spurious keypoints per frame, as a fraction of the landmark keypoints.
    pub keypoint_outlier_fraction: f64,
    /// Per-axis standard deviation of camera attitude jitter (rad).
    pub pose_jitter_rad: f64,
    pub embedding_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            keypoint_px: 0.5,
            warp_px: 1.5,
            warp_outlier_fraction: 0.02,
            keypoint_outlier_fraction: 0.1,
            pose_jitter_rad: 0.005,
            embedding_sigma: 0.01,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { keypoint_px: 0.0, warp_px: 0.0, warp_outlier_fraction: 0.0, keypoint_outlier_fraction: 0.0, pose_jitter_rad: 0.0, embedding_sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_frames: usize,
    pub city: City,
    pub step_m: f64,
    pub frame_interval_s: f64,
    pub turn_probability: f64,
    /// Landmarks per square meter of facade.
    pub landmark_density: f64,
    /// Landmarks farther than this are neither detected nor matched.
    pub max_range_m: f64,
    pub camera_height_m: f64,
    /// Lateral offset of revisiting drives from the original lane.
    pub revisit_offset_m: f64,
    pub time_jumps: Vec<TimeJump>,
    pub revisits: Vec<Revisit>,
    pub noise: NoiseConfig,
    pub warp_grid: usize,
    /// Fixed keypoints on the visible part of the ego vehicle.
    pub ego_keypoints: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_frames: 200,
            city: City::default(),
            step_m: 10.0,
            frame_interval_s: 1.2,
            turn_probability: 0.3,
            landmark_density: 0.08,
            max_range_m: 80.0,
            camera_height_m: 1.6,
            revisit_offset_m: 1.0,
            time_jumps: Vec::new(),
            revisits: Vec::new(),
            noise: NoiseConfig::default(),
            warp_grid: 64,
            ego_keypoints: 20,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_frames < 2 {
            return Err(SynthError::InvalidConfig("n_frames must be at least 2".into()));
        }
        if !(self.step_m > 0.0) || !(self.frame_interval_s > 0.0) {
            return Err(SynthError::InvalidConfig("step and frame interval must be positive".into()));
        }
        let steps_per_block = self.city.block_size / self.step_m;
        if (steps_per_block - steps_per_block.round()).abs() > 1e-9 || steps_per_block.round() < 4.0 {
            return Err(SynthError::InvalidConfig("block size must be a multiple (>= 4) of the step".into()));
        }
        if !(0.0..=1.0).contains(&self.turn_probability) {
            return Err(SynthError::InvalidConfig("turn_probability must lie in [0, 1]".into()));
        }
        if self.warp_grid < 2 {
            return Err(SynthError::InvalidConfig("warp grid must be at least 2x2".into()));
        }
        for j in &self.time_jumps {
            if j.frame == 0 || j.frame >= self.n_frames || !(j.gap_s > 0.0) {
                return Err(SynthError::InvalidConfig(format!("invalid time jump {j:?}")));
            }
        }
        for r in &self.revisits {
            if r.length == 0 || r.start + r.length > self.n_frames || r.revisited_start + r.length > r.start {
                return Err(SynthError::InvalidConfig(format!("invalid revisit {r:?}")));
            }
            if !self.time_jumps.iter().any(|j| j.frame == r.start) {
                return Err(SynthError::InvalidConfig(format!("revisit at frame {} needs a time jump there", r.start)));
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        synth_intrinsics()
    }
}

pub fn synth_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(560.0, 560.0, 400.0, 300.0, 800, 600).expect("valid intrinsics")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub pose: Pose,
    pub center: Point3<f64>,
    /// Direction of travel in the ground plane (rad).
    pub heading: f64,
    pub timestamp: f64,
    /// Index of the capture session (incremented at every time jump).
    pub session: usize,
    pub appearance_shift: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameTruth>,
    pub landmarks: Vec<Point3<f64>>,
    blocks: BTreeMap<(i64, i64), Range<usize>>,
}

const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Grid position in step units plus the direction index of the next move.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DriveState {
    cell: (i64, i64),
    dir: usize,
}

impl Scene {
    /// Ground-truth camera-from-world pose of every frame.
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn ground_truth_motions(&self) -> Vec<RelativeMotion> {
        self.frames.windows(2).enumerate().map(|(i, w)| relative_motion_indexed(&w[0].pose, &w[1].pose, i, i + 1)).collect()
    }

    /// Landmark indices stored for the blocks around `p` within `radius`.
    pub fn landmarks_near(&self, p: &Point3<f64>, radius: f64) -> impl Iterator<Item = usize> + '_ {
        let (b0x, b0y) = self.config.city.block_of(p.x - radius, p.y - radius);
        let (b1x, b1y) = self.config.city.block_of(p.x + radius, p.y + radius);
        self.blocks
            .range((b0x, i64::MIN)..=(b1x, i64::MAX))
            .filter(move |((_, by), _)| (b0y..=b1y).contains(by))
            .flat_map(|(_, r)| r.clone())
    }

    /// Landmarks seen by `frame`: in front, inside the image, within range
    /// and unoccluded. Returns `(landmark, exact pixel)` pairs.
    pub fn visible_landmarks(&self, frame: usize) -> Vec<(usize, Vector2<f64>)> {
        let f = &self.frames[frame];
        let range = self.config.max_range_m;
        let mut out = Vec::new();
        for l in self.landmarks_near(&f.center, range) {
            let x = &self.landmarks[l];
            if (x - f.center).norm() > range {
                continue;
            }
            let xc = f.pose.transform(&x.coords);
            if xc.z < 0.5 {
                continue;
            }
            let Ok(px) = self.intrinsics.project_camera_point(&xc) else { continue };
            if !self.intrinsics.contains(px) || !self.config.city.visible(&f.center, x) {
                continue;
            }
            out.push((l, px));
        }
        out
    }
}

fn heading_of(dir: usize) -> Vector2<f64> {
    let (dx, dy) = DIRS[dir];
    Vector2::new(dx as f64, dy as f64)
}

/// Camera-from-world rotation of a camera looking against the direction of
/// travel `heading`, with image y pointing down.
pub fn backward_camera_rotation(heading: f64) -> Matrix3<f64> {
    let (s, c) = heading.sin_cos();
    let x = Vector3::new(-s, c, 0.0);
    let y = Vector3::new(0.0, 0.0, -1.0);
    let z = Vector3::new(-c, -s, 0.0);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_block = (cfg.city.block_size / cfg.step_m).round() as i64;
    let n = cfg.n_frames;

    let jump_at: BTreeMap<usize, f64> = cfg.time_jumps.iter().map(|j| (j.frame, j.gap_s)).collect();
    let revisit_at: BTreeMap<usize, &Revisit> = cfg.revisits.iter().map(|r| (r.start, r)).collect();

    // Drive states per frame; `replayed[f]` marks revisiting frames.
    let mut states: Vec<DriveState> = Vec::with_capacity(n);
    let mut replayed = vec![false; n];
    let mut session = vec![0usize; n];
    let mut relocations = 0i64;
    let mut state = DriveState { cell: (0, 0), dir: 0 };
    let mut replay: Option<(usize, usize, usize)> = None;
    let turn = |rng: &mut ChaCha8Rng, s: &mut DriveState| {
        let at_intersection = s.cell.0 % steps_per_block == 0 && s.cell.1 % steps_per_block == 0;
        if at_intersection && rng.random_bool(cfg.turn_probability) {
            s.dir = if rng.random_bool(0.5) { (s.dir + 1) % 4 } else { (s.dir + 3) % 4 };
        }
    };
    for f in 0..n {
        if f > 0 {
            session[f] = session[f - 1] + usize::from(jump_at.contains_key(&f));
        }
        if let Some(r) = revisit_at.get(&f) {
            replay = Some((r.revisited_start, r.start, r.start + r.length));
        }
        if let Some((src, start, end)) = replay {
            state = states[src + (f - start)];
            replayed[f] = true;
            states.push(state);
            if f + 1 == end {
                replay = None;
                let (dx, dy) = DIRS[state.dir];
                state.cell = (state.cell.0 + dx, state.cell.1 + dy);
                turn(&mut rng, &mut state);
            }
            continue;
        }
        if f > 0 && jump_at.contains_key(&f) {
            relocations += 1;
            state = DriveState { cell: (relocations * 50 * steps_per_block, relocations * 50 * steps_per_block), dir: rng.random_range(0..4) };
        }
        states.push(state);
        let (dx, dy) = DIRS[state.dir];
        state.cell = (state.cell.0 + dx, state.cell.1 + dy);
        turn(&mut rng, &mut state);
    }

    // Heading: mean move direction over a 6-segment window inside each continuous run.
    let run_start = |f: usize| (0..=f).rev().find(|&g| g == 0 || jump_at.contains_key(&g)).unwrap_or(0);
    let mut frames = Vec::with_capacity(n);
    let jitter = Normal::new(0.0, cfg.noise.pose_jitter_rad.max(0.0)).unwrap();
    let mut timestamp = 0.0;
    for f in 0..n {
        let lo = run_start(f);
        let hi = (f + 1..n).find(|&g| jump_at.contains_key(&g)).unwrap_or(n) - 1;
        let mut sum = Vector2::zeros();
        for g in f.saturating_sub(3).max(lo)..=(f + 2).min(hi) {
            // The move direction out of the last frame of a run is its own.
            sum += heading_of(states[g].dir);
        }
        if sum.norm() < 1e-9 {
            sum = heading_of(states[f].dir);
        }
        let heading = sum.y.atan2(sum.x);
        let (s, c) = heading.sin_cos();
        let lateral = if replayed[f] { cfg.revisit_offset_m } else { 0.0 };
        let cell = states[f].cell;
        let center = Point3::new(cell.0 as f64 * cfg.step_m - s * lateral, cell.1 as f64 * cfg.step_m + c * lateral, cfg.camera_height_m);
        let r_jit = Rotation3::new(Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng)));
        let r = r_jit.matrix() * backward_camera_rotation(heading);
        let pose = Pose::new(UnitQuaternion::from_matrix(&r), -r * center.coords);
        if f > 0 {
            timestamp += jump_at.get(&f).copied().unwrap_or(cfg.frame_interval_s);
        }
        let appearance_shift = cfg
            .revisits
            .iter()
            .filter(|r| f >= r.start && session[f] == session[r.start])
            .map(|r| r.appearance_shift)
            .last()
            .unwrap_or(0.0);
        frames.push(FrameTruth { pose, center, heading, timestamp, session: session[f], appearance_shift });
    }

    let (landmarks, blocks) = place_landmarks(cfg, &frames);
    log::debug!("synthetic scene: {} frames, {} landmarks, {} blocks", n, landmarks.len(), blocks.len());
    Ok(Scene { config: cfg.clone(), intrinsics: cfg.intrinsics(), frames, landmarks, blocks })
}

fn place_landmarks(cfg: &SceneConfig, frames: &[FrameTruth]) -> (Vec<Point3<f64>>, BTreeMap<(i64, i64), Range<usize>>) {
    let city = &cfg.city;
    let reach = cfg.max_range_m + 1.0;
    let mut wanted = BTreeSet::new();
    for f in frames {
        let (b0x, b0y) = city.block_of(f.center.x - reach, f.center.y - reach);
        let (b1x, b1y) = city.block_of(f.center.x + reach, f.center.y + reach);
        for bx in b0x..=b1x {
            for by in b0y..=b1y {
                wanted.insert((bx, by));
            }
        }
    }
    let mut landmarks = Vec::new();
    let mut blocks = BTreeMap::new();
    for (bx, by) in wanted {
        let mut rng = ChaCha8Rng::seed_from_u64(block_seed(cfg.seed ^ 0x5EED_1A4D, bx, by));
        let (x0, x1, y0, y1) = city.footprint(bx, by);
        let h = city.block_height(bx, by);
        let start = landmarks.len();
        for face in 0..4u8 {
            let width = if face < 2 { y1 - y0 } else { x1 - x0 };
            let mean = cfg.landmark_density * width * (h - 0.5);
            let count = if mean > 0.0 { Poisson::new(mean).unwrap().sample(&mut rng) as usize } else { 0 };
            for _ in 0..count {
                let u = rng.random_range(0.0..1.0);
                let z = rng.random_range(0.5..h);
                let p = match face {
                    0 => Point3::new(x0, y0 + u * (y1 - y0), z),
                    1 => Point3::new(x1, y0 + u * (y1 - y0), z),
                    2 => Point3::new(x0 + u * (x1 - x0), y0, z),
                    _ => Point3::new(x0 + u * (x1 - x0), y1, z),
                };
                landmarks.push(p);
            }
        }
        blocks.insert((bx, by), start..landmarks.len());
    }
    (landmarks, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project, rotation_angle_between};

    fn straight(n: usize) -> SceneConfig {
        SceneConfig { n_frames: n, turn_probability: 0.0, noise: NoiseConfig::noiseless(), ..Default::default() }
    }

    #[test]
    fn straight_drive_is_collinear_with_constant_heading() {
        let scene = generate_scene(&straight(30)).unwrap();
        let q0 = scene.frames[0].pose.rotation;
        for f in &scene.frames {
            assert!(f.center.y.abs() < 1e-12);
            assert!(rotation_angle_between(&q0, &f.pose.rotation) < 1e-12);
        }
    }

    #[test]
    fn median_step_is_nominal() {
        let cfg = SceneConfig { n_frames: 120, turn_probability: 0.5, ..Default::default() };
        let scene = generate_scene(&cfg).unwrap();
        let mut steps: Vec<f64> = scene.ground_truth_motions().iter().map(|m| m.translation.norm()).collect();
        steps.sort_by(f64::total_cmp);
        assert!((steps[steps.len() / 2] - 10.0).abs() < 1e-9);
        // Centers step exactly one step length apart as well.
        assert!(scene.frames.windows(2).all(|w| ((w[1].center - w[0].center).norm() - 10.0).abs() < 1e-9));
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig { n_frames: 60, seed: 42, ..Default::default() };
        let (a, b) = (generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.landmarks, b.landmarks);
    }

    #[test]
    fn camera_looks_backwards() {
        let scene = generate_scene(&straight(5)).unwrap();
        let f = &scene.frames[2];
        // A point behind the vehicle lies in front of the camera.
        let behind = f.center - Vector3::new(20.0, 0.0, 0.0);
        assert!(f.pose.transform(&behind.coords).z > 0.0);
        let px = project(&scene.intrinsics, &f.pose, &behind.coords).unwrap();
        assert!((px.x - 400.0).abs() < 1e-9);
        // Points above the camera project into the upper half of the image.
        let up = behind + Vector3::new(0.0, 0.0, 5.0);
        assert!(project(&scene.intrinsics, &f.pose, &up.coords).unwrap().y < 300.0);
    }

    #[test]
    fn composing_motions_reproduces_last_pose() {
        let cfg = SceneConfig { n_frames: 80, turn_probability: 0.5, seed: 3, ..Default::default() };
        let scene = generate_scene(&cfg).unwrap();
        let mut acc = scene.frames[0].pose;
        for m in scene.ground_truth_motions() {
            acc = m.as_pose().compose(&acc);
        }
        let last = &scene.frames.last().unwrap().pose;
        assert!(rotation_angle_between(&acc.rotation, &last.rotation) < 1e-9);
        assert!((acc.translation - last.translation).norm() < 1e-9);
    }

    #[test]
    fn time_jumps_shift_timestamps_and_relocate() {
        let cfg = SceneConfig { n_frames: 40, time_jumps: vec![TimeJump { frame: 20, gap_s: 76.0 }], ..Default::default() };
        let scene = generate_scene(&cfg).unwrap();
        let ts = scene.timestamps();
        assert!((ts[20] - ts[19] - 76.0).abs() < 1e-9);
        assert!((ts[19] - ts[18] - 1.2).abs() < 1e-9);
        assert!((scene.frames[20].center - scene.frames[19].center).norm() > 1000.0);
        assert_eq!(scene.frames[20].session, 1);
    }

    #[test]
    fn revisits_replay_earlier_places() {
        let cfg = SceneConfig {
            n_frames: 60,
            time_jumps: vec![TimeJump { frame: 30, gap_s: 300.0 }],
            revisits: vec![Revisit { start: 30, length: 10, revisited_start: 5, appearance_shift: 0.5 }],
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        for k in 0..10 {
            let d = (scene.frames[30 + k].center - scene.frames[5 + k].center).norm();
            assert!((d - 1.0).abs() < 1e-9, "{d}");
        }
        assert_eq!(scene.frames[45].appearance_shift, 0.5);
        assert_eq!(scene.frames[10].appearance_shift, 0.0);
        // After the replay the drive continues from where the original went.
        assert!(((scene.frames[40].center - scene.frames[39].center).norm() - 10.0).abs() < 0.2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_scene(&SceneConfig { n_frames: 1, ..Default::default() }).is_err());
        assert!(generate_scene(&SceneConfig { step_m: 30.0, ..Default::default() }).is_err());
        let no_jump = SceneConfig { revisits: vec![Revisit { start: 50, length: 5, revisited_start: 0, appearance_shift: 0.0 }], ..Default::default() };
        assert!(generate_scene(&no_jump).is_err());
    }

    #[test]
    fn visible_landmarks_project_inside_image() {
        let scene = generate_scene(&SceneConfig { n_frames: 20, seed: 5, ..Default::default() }).unwrap();
        for f in 0..20 {
            let vis = scene.visible_landmarks(f);
            assert!(vis.len() > 50, "frame {f}: {}", vis.len());
            for (l, px) in vis {
                let p = project(&scene.intrinsics, &scene.frames[f].pose, &scene.landmarks[l].coords).unwrap();
                assert!((p - px).norm() < 1e-9);
                assert!((scene.landmarks[l] - scene.frames[f].center).norm() <= 80.0);
            }
        }
    }
}
