use nalgebra::Vector2;

/// Uniform-grid bucket index for exact nearest-neighbour queries in 2D.
#[derive(Debug, Clone)]
pub struct PointIndex {
    cell: f64,
    origin: Vector2<f64>,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
    points: Vec<Vector2<f64>>,
    ids: Vec<usize>,
}

/// Result of a nearest-neighbour query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub id: usize,
    pub distance: f64,
    /// Another point lies at exactly the same distance.
    pub tied: bool,
}

impl PointIndex {
    /// Indexes `(id, position)` pairs with buckets of `cell` pixels.
    pub fn new(items: impl IntoIterator<Item = (usize, Vector2<f64>)>, cell: f64) -> Self {
        let (ids, points): (Vec<usize>, Vec<Vector2<f64>>) = items.into_iter().unzip();
        let cell = cell.max(1e-6);
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vector2::zeros();
            hi = Vector2::zeros();
        }
        let cols = (((hi.x - lo.x) / cell).floor() as usize + 1).min(4096);
        let rows = (((hi.y - lo.y) / cell).floor() as usize + 1).min(4096);
        let mut index = Self { cell, origin: lo, cols, rows, buckets: vec![Vec::new(); cols * rows], points, ids };
        for k in 0..index.points.len() {
            let (c, r) = index.bucket_of(index.points[k]);
            index.buckets[r * cols + c].push(k);
        }
        index
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bucket_of(&self, p: Vector2<f64>) -> (usize, usize) {
        let c = ((p.x - self.origin.x) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = ((p.y - self.origin.y) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (c, r)
    }

    /// Exact nearest neighbour of `q`, or `None` for an empty index.
    pub fn nearest(&self, q: Vector2<f64>) -> Option<Nearest> {
        if self.points.is_empty() {
            return None;
        }
        let (qc, qr) = self.bucket_of(q);
        let mut best = f64::INFINITY;
        let mut best_k = usize::MAX;
        let mut tied = false;
        let max_ring = self.cols.max(self.rows);
        for ring in 0..=max_ring {
            let r_lo = qr as isize - ring as isize;
            let r_hi = qr as isize + ring as isize;
            let c_lo = qc as isize - ring as isize;
            let c_hi = qc as isize + ring as isize;
            for r in r_lo..=r_hi {
                if r < 0 || r >= self.rows as isize {
                    continue;
                }
                let on_edge_row = r == r_lo || r == r_hi;
                let mut c = c_lo;
                while c <= c_hi {
                    if c >= 0 && (c as usize) < self.cols {
                        for &k in &self.buckets[r as usize * self.cols + c as usize] {
                            let d = (self.points[k] - q).norm_squared();
                            if d < best {
                                best = d;
                                best_k = k;
                                tied = false;
                            } else if d == best {
                                tied = true;
                            }
                        }
                    }
                    c += if on_edge_row || c == c_hi { 1 } else { c_hi - c };
                }
            }
            // Points in later rings are at least `ring * cell` away, also
            // for queries clamped in from outside the indexed box.
            let bound = ring as f64 * self.cell;
            if best < bound * bound {
                break;
            }
        }
        Some(Nearest { id: self.ids[best_k], distance: best.sqrt(), tied })
    }
}
