//! Readers and writers for every on-disk format of a data directory.
//!
//! Binary files are little-endian with a four-byte magic and a `u32`
//! version. Tables are CSV with a header row; structured sidecars are JSON.

mod binary;
mod json;
mod tables;

use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use thiserror::Error;

use crate::geom::{canonical_quaternion, quaternion_from_wxyz};
use crate::matching::CropId;

pub use binary::{read_embedding, read_keypoints, read_warp, write_embedding, write_keypoints, write_warp, FORMAT_VERSION};
pub use json::{
    read_fragments, read_manifest, read_pairs, read_warp_index, write_fragments, write_manifest, write_pairs, write_warp_index, FragmentFrame, FragmentRecord, WarpIndexEntry,
};
pub use tables::{
    read_manual_pairs, read_matches, read_motions, write_manual_pairs, write_matches, write_motions, CropChoice, ManualPair, MANUAL_PAIRS_HEADER,
    MATCHES_HEADER, MOTIONS_HEADER,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: expected magic {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn malformed(path: &Path, reason: impl Into<String>) -> Self {
        IoError::Malformed { path: path.to_path_buf(), reason: reason.into() }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WARP_INDEX_FILE: &str = "warp_index.json";
pub const FRAGMENTS_FILE: &str = "fragments.json";
pub const MANUAL_PAIRS_FILE: &str = "manual_pairs.csv";
pub const MOTIONS_FILE: &str = "motions.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const PROPOSED_PAIRS_FILE: &str = "proposed_pairs.json";
/// Pairs that were matched, with one `matches_<i>_<j>.csv` each.
pub const MATCHED_PAIRS_FILE: &str = "pairs.json";
/// Two-view motions of consecutive pairs, in the motions table format.
pub const TWO_VIEW_FILE: &str = "two_view.csv";

pub fn warp_file_name(i: usize, j: usize, a: CropId, b: CropId) -> String {
    format!("warp_{i}_{j}_{}_{}.vlw", a.as_str(), b.as_str())
}

pub fn keypoints_file_name(frame: usize) -> String {
    format!("kp_{frame}.vlk")
}

pub fn embedding_file_name(frame: usize) -> String {
    format!("emb_{frame}.vle")
}

pub fn matches_file_name(i: usize, j: usize) -> String {
    format!("matches_{i}_{j}.csv")
}

/// Quaternion from stored components. Unit-norm input (within 1e-9) is kept
/// bit-exact so written files re-read identically; anything else is
/// renormalized.
pub(crate) fn stored_quaternion(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    let q = Quaternion::new(w, x, y, z);
    if (q.norm() - 1.0).abs() <= 1e-9 {
        canonical_quaternion(UnitQuaternion::new_unchecked(q))
    } else {
        quaternion_from_wxyz(w, x, y, z)
    }
}

/// Shortest decimal representation of `v` rounded to 9 significant digits.
pub(crate) fn nine_digits(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names() {
        assert_eq!(warp_file_name(3, 4, CropId::Left, CropId::Full), "warp_3_4_LEFT_FULL.vlw");
        assert_eq!(keypoints_file_name(12), "kp_12.vlk");
        assert_eq!(embedding_file_name(0), "emb_0.vle");
        assert_eq!(matches_file_name(1, 25), "matches_1_25.csv");
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(nine_digits(123.456789012), "123.456789");
        assert_eq!(nine_digits(0.1), "0.1");
        assert_eq!(nine_digits(-1.0e-7 / 3.0), "-0.0000000333333333");
        assert_eq!(nine_digits(799.999999999), "800");
    }
}
