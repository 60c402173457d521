use nalgebra::Vector2;

use super::{CropRect, MatchError};

/// Grid of `(tx, ty, certainty)` over `src_crop`; `(tx, ty)` are
/// normalized coordinates inside `dst_crop`. Grid node `(r, c)` sits at
/// the center of its cell, i.e. crop pixel `((c + ½)·w/W, (r + ½)·h/H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWarp {
    pub src_crop: CropRect,
    pub dst_crop: CropRect,
    rows: usize,
    cols: usize,
    data: Vec<[f32; 3]>,
}

impl DenseWarp {
    pub fn new(src_crop: CropRect, dst_crop: CropRect, rows: usize, cols: usize, data: Vec<[f32; 3]>) -> Result<Self, MatchError> {
        if rows < 2 || cols < 2 {
            return Err(MatchError::InvalidWarp(format!("grid must be at least 2x2, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(MatchError::InvalidWarp(format!("expected {} cells, got {}", rows * cols, data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !v.iter().all(|x| x.is_finite()) || !(0.0..=1.0).contains(&v[2])) {
            return Err(MatchError::InvalidWarp(format!("bad cell {bad:?}")));
        }
        Ok(Self { src_crop, dst_crop, rows, cols, data })
    }

    /// Builds a warp by evaluating `f` at every grid node; `f` receives the
    /// node position in source-crop pixels.
    pub fn from_fn(
        src_crop: CropRect,
        dst_crop: CropRect,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(Vector2<f64>) -> [f32; 3],
    ) -> Result<Self, MatchError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(node_position(&src_crop, rows, cols, r, c)));
            }
        }
        Self::new(src_crop, dst_crop, rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn cell(&self, r: usize, c: usize) -> [f32; 3] {
        self.data[r * self.cols + c]
    }

    pub fn node_position(&self, r: usize, c: usize) -> Vector2<f64> {
        node_position(&self.src_crop, self.rows, self.cols, r, c)
    }
}

fn node_position(crop: &CropRect, rows: usize, cols: usize, r: usize, c: usize) -> Vector2<f64> {
    Vector2::new((c as f64 + 0.5) * crop.w as f64 / cols as f64, (r as f64 + 0.5) * crop.h as f64 / rows as f64)
}

/// Bilinear lookup at `p` (source-crop pixels). Returns the predicted
/// position in destination-crop pixels and the interpolated certainty.
pub fn sample_warp(warp: &DenseWarp, p: Vector2<f64>) -> Result<(Vector2<f64>, f64), MatchError> {
    let (w, h) = (warp.src_crop.w as f64, warp.src_crop.h as f64);
    const TOL: f64 = 1e-9;
    if !(p.x >= -TOL && p.y >= -TOL && p.x <= w + TOL && p.y <= h + TOL) {
        return Err(MatchError::OutOfCrop(p.x, p.y));
    }
    let (rows, cols) = (warp.rows, warp.cols);
    let gx = (p.x * cols as f64 / w - 0.5).clamp(0.0, (cols - 1) as f64);
    let gy = (p.y * rows as f64 / h - 0.5).clamp(0.0, (rows - 1) as f64);
    let c0 = (gx.floor() as usize).min(cols - 2);
    let r0 = (gy.floor() as usize).min(rows - 2);
    let fx = gx - c0 as f64;
    let fy = gy - r0 as f64;
    let mut out = [0.0f64; 3];
    for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let cell = warp.cell(r0 + dr, c0 + dc);
            for k in 0..3 {
                out[k] += weight * cell[k] as f64;
            }
        }
    }
    let pred = Vector2::new(out[0] * warp.dst_crop.w as f64, out[1] * warp.dst_crop.h as f64);
    Ok((pred, out[2].clamp(0.0, 1.0)))
}

/// Mean of the certainty channel over the whole grid.
pub fn mean_certainty(warp: &DenseWarp) -> f64 {
    warp.data.iter().map(|v| v[2] as f64).sum::<f64>() / warp.data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::CropId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn crops() -> (CropRect, CropRect) {
        (CropRect::full(0, 0, 0, 160, 120), CropRect::full(1, 0, 0, 160, 120))
    }

    fn identity_warp(rows: usize, cols: usize) -> DenseWarp {
        let (a, b) = crops();
        DenseWarp::from_fn(a, b, rows, cols, |p| [(p.x / 160.0) as f32, (p.y / 120.0) as f32, 1.0]).unwrap()
    }

    #[test]
    fn identity_warp_maps_points_to_themselves() {
        let warp = identity_warp(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            // Stay half a cell away from the border where the grid clamps.
            let p = Vector2::new(rng.random_range(5.0..155.0), rng.random_range(3.75..116.25));
            let (q, c) = sample_warp(&warp, p).unwrap();
            assert!((q - p).norm() < 1e-4, "{p} {q}");
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nodes_return_stored_values() {
        let (a, b) = crops();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let warp = DenseWarp::from_fn(a, b, 8, 10, |_| [rng.random(), rng.random(), rng.random()]).unwrap();
        for r in 0..8 {
            for c in 0..10 {
                let (q, cert) = sample_warp(&warp, warp.node_position(r, c)).unwrap();
                let v = warp.cell(r, c);
                assert!((q.x - v[0] as f64 * 160.0).abs() < 1e-9);
                assert!((q.y - v[1] as f64 * 120.0).abs() < 1e-9);
                assert!((cert - v[2] as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn midpoint_certainty_is_average() {
        let (a, b) = crops();
        // Rows 0 carry certainty 0, rows 1 certainty 1.
        let warp = DenseWarp::new(a, b, 2, 2, vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap();
        let mid = (warp.node_position(0, 0) + warp.node_position(1, 1)) / 2.0;
        let (_, c) = sample_warp(&warp, mid).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn outside_source_crop_fails() {
        let warp = identity_warp(4, 4);
        assert!(matches!(sample_warp(&warp, Vector2::new(-1.0, 5.0)), Err(MatchError::OutOfCrop(..))));
        assert!(matches!(sample_warp(&warp, Vector2::new(5.0, 121.0)), Err(MatchError::OutOfCrop(..))));
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let (a, b) = crops();
        assert!(DenseWarp::new(a, b, 1, 2, vec![[0.0; 3]; 2]).is_err());
        assert!(DenseWarp::new(a, b, 2, 2, vec![[0.0, 0.0, 1.5]; 4]).is_err());
        assert!(DenseWarp::new(a, b, 2, 2, vec![[f32::NAN, 0.0, 0.5]; 4]).is_err());
        assert_eq!(a.crop_id, CropId::Full);
    }

    #[test]
    fn mean_certainty_cases() {
        let (a, b) = crops();
        let ones = DenseWarp::new(a, b, 2, 2, vec![[0.0, 0.0, 1.0]; 4]).unwrap();
        assert_eq!(mean_certainty(&ones), 1.0);
        let half = DenseWarp::new(a, b, 2, 2, vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(mean_certainty(&half), 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let warp = DenseWarp::from_fn(a, b, 37, 23, |_| [0.5, 0.5, rng.random()]).unwrap();
        let mut naive = 0.0;
        for r in 0..37 {
            for c in 0..23 {
                naive += warp.cell(r, c)[2] as f64;
            }
        }
        assert!((mean_certainty(&warp) - naive / (37.0 * 23.0)).abs() < 1e-12);
    }
}
