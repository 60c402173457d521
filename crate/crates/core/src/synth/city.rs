//! Manhattan street grid with box-shaped buildings and a ground plane.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Surface hit by a ray; used to detect depth discontinuities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    Ground,
    Facade { bx: i64, by: i64, face: u8 },
    Roof { bx: i64, by: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point3<f64>,
    pub surface: Surface,
}

/// Street centerlines run along `x = k * block_size` and `y = k * block_size`.
/// Each block cell holds one building inset from the centerlines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub block_size: f64,
    pub inset: f64,
    pub min_height: f64,
    pub max_height: f64,
    pub seed: u64,
}

impl Default for City {
    fn default() -> Self {
        Self { block_size: 100.0, inset: 10.0, min_height: 12.0, max_height: 30.0, seed: 0 }
    }
}

/// Deterministic per-block seed.
pub(crate) fn block_seed(seed: u64, bx: i64, by: i64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (bx as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ (by as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

impl City {
    pub fn block_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.block_size).floor() as i64, (y / self.block_size).floor() as i64)
    }

    pub fn block_height(&self, bx: i64, by: i64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(block_seed(self.seed, bx, by));
        rng.random_range(self.min_height..self.max_height)
    }

    /// Footprint `[x0, x1] x [y0, y1]` of the building in block `(bx, by)`.
    pub fn footprint(&self, bx: i64, by: i64) -> (f64, f64, f64, f64) {
        let b = self.block_size;
        (bx as f64 * b + self.inset, (bx + 1) as f64 * b - self.inset, by as f64 * b + self.inset, (by + 1) as f64 * b - self.inset)
    }

    /// First surface hit along `origin + t * dir` for `t` in `(0, max_t]`.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z < -1e-12 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            if t <= max_t {
                best = Some(Hit { t, point: origin + dir * t, surface: Surface::Ground });
            }
        }
        let end = origin + dir * max_t;
        let (b0x, b0y) = self.block_of(origin.x.min(end.x), origin.y.min(end.y));
        let (b1x, b1y) = self.block_of(origin.x.max(end.x), origin.y.max(end.y));
        for bx in b0x..=b1x {
            for by in b0y..=b1y {
                let limit = best.map_or(max_t, |h| h.t);
                if let Some(hit) = self.cast_block(origin, dir, bx, by, limit) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    fn cast_block(&self, origin: &Point3<f64>, dir: &Vector3<f64>, bx: i64, by: i64, max_t: f64) -> Option<Hit> {
        let (x0, x1, y0, y1) = self.footprint(bx, by);
        let h = self.block_height(bx, by);
        let lo = [x0, y0, 0.0];
        let hi = [x1, y1, h];
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut axis = 0;
        for k in 0..3 {
            let (o, d) = (origin[k], dir[k]);
            if d.abs() < 1e-15 {
                if o < lo[k] || o > hi[k] {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo[k] - o) / d, (hi[k] - o) / d);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            if ta > t_enter {
                t_enter = ta;
                axis = k;
            }
            t_exit = t_exit.min(tb);
        }
        if t_enter > t_exit || t_enter <= 0.0 || t_enter > max_t {
            return None;
        }
        // Faces: 0 = -x, 1 = +x, 2 = -y, 3 = +y.
        let surface = match axis {
            0 => Surface::Facade { bx, by, face: if dir.x > 0.0 { 0 } else { 1 } },
            1 => Surface::Facade { bx, by, face: if dir.y > 0.0 { 2 } else { 3 } },
            _ => Surface::Roof { bx, by },
        };
        Some(Hit { t: t_enter, point: origin + dir * t_enter, surface })
    }

    /// Whether `x` is seen unobstructed from `eye`.
    pub fn visible(&self, eye: &Point3<f64>, x: &Point3<f64>) -> bool {
        let d = x - eye;
        let dist = d.norm();
        if dist < 1e-9 {
            return false;
        }
        let tol = 1e-6 * dist.max(1.0);
        match self.cast(eye, &(d / dist), dist + tol) {
            Some(hit) => hit.t >= dist - tol.max(1e-4),
            None => true,
        }
    }
}
