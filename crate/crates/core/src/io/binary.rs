use std::fs;
use std::path::Path;

use super::IoError;
use crate::matching::{CropRect, DenseWarp, Keypoint, KeypointSet};
use crate::retrieval::Embedding;

pub const FORMAT_VERSION: u32 = 1;

const WARP_MAGIC: &[u8; 4] = b"VLCW";
const KEYPOINT_MAGIC: &[u8; 4] = b"VLCK";
const EMBEDDING_MAGIC: &[u8; 4] = b"VLCE";

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, bytes: &'a [u8], magic: &'static [u8; 4]) -> Result<Self, IoError> {
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(IoError::BadMagic { path: path.to_path_buf(), expected: std::str::from_utf8(magic).expect("ascii magic") });
        }
        let mut r = Self { path, bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IoError::UnsupportedVersion { path: path.to_path_buf(), version });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| IoError::malformed(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IoError> {
        let len = n.checked_mul(4).ok_or_else(|| IoError::malformed(self.path, "length overflow"))?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(self) -> Result<(), IoError> {
        if self.pos != self.bytes.len() {
            return Err(IoError::malformed(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4], capacity: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + capacity);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Writes the grid of a warp; its crop rectangles belong in the warp index.
pub fn write_warp(path: &Path, warp: &DenseWarp) -> Result<(), IoError> {
    let mut out = header(WARP_MAGIC, 8 + warp.cells().len() * 12);
    out.extend_from_slice(&(warp.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(warp.cols() as u32).to_le_bytes());
    for cell in warp.cells() {
        for v in cell {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write(path, &out)
}

pub fn read_warp(path: &Path, src_crop: CropRect, dst_crop: CropRect) -> Result<DenseWarp, IoError> {
    let bytes = read(path)?;
    let mut r = Reader::open(path, &bytes, WARP_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let values = r.f32s(rows.checked_mul(cols).and_then(|n| n.checked_mul(3)).ok_or_else(|| IoError::malformed(path, "grid too large"))?)?;
    r.finish()?;
    let data = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    DenseWarp::new(src_crop, dst_crop, rows, cols, data).map_err(|e| IoError::malformed(path, e.to_string()))
}

/// Coordinates are stored as `f32`; values that are not representable are
/// rounded.
pub fn write_keypoints(path: &Path, kps: &KeypointSet) -> Result<(), IoError> {
    let mut out = header(KEYPOINT_MAGIC, 4 + kps.points.len() * 12);
    out.extend_from_slice(&(kps.points.len() as u32).to_le_bytes());
    for k in &kps.points {
        for v in [k.x, k.y, k.score] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write(path, &out)
}

/// Reads keypoints of `frame`; the image size comes from the manifest.
pub fn read_keypoints(path: &Path, frame: usize, width: u32, height: u32) -> Result<KeypointSet, IoError> {
    let bytes = read(path)?;
    let mut r = Reader::open(path, &bytes, KEYPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    let values = r.f32s(count.checked_mul(3).ok_or_else(|| IoError::malformed(path, "count too large"))?)?;
    r.finish()?;
    let points: Vec<Keypoint> = values.chunks_exact(3).map(|c| Keypoint { x: c[0] as f64, y: c[1] as f64, score: c[2] as f64 }).collect();
    if points.iter().any(|k| !(k.x.is_finite() && k.y.is_finite() && k.score.is_finite())) {
        return Err(IoError::malformed(path, "non-finite keypoint"));
    }
    Ok(KeypointSet::new(frame, width, height, points))
}

pub fn write_embedding(path: &Path, embedding: &Embedding) -> Result<(), IoError> {
    let mut out = header(EMBEDDING_MAGIC, 4 + embedding.vector.len() * 4);
    out.extend_from_slice(&(embedding.vector.len() as u32).to_le_bytes());
    for v in &embedding.vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write(path, &out)
}

pub fn read_embedding(path: &Path, frame: usize) -> Result<Embedding, IoError> {
    let bytes = read(path)?;
    let mut r = Reader::open(path, &bytes, EMBEDDING_MAGIC)?;
    let dim = r.u32()? as usize;
    let vector = r.f32s(dim)?;
    r.finish()?;
    Ok(Embedding::new(frame, vector))
}
