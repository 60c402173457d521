use std::fs::File;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{nine_digits, stored_quaternion, IoError};
use crate::geom::{quaternion_wxyz, RelativeMotion};
use crate::matching::{CropId, Match, MatchSet};
use crate::pipeline::{MotionRecord, MotionSource};
use crate::retrieval::{FramePair, PairSource};

pub const MATCHES_HEADER: [&str; 7] = ["kp_i", "kp_j", "x_i", "y_i", "x_j", "y_j", "certainty"];
pub const MANUAL_PAIRS_HEADER: [&str; 4] = ["frame_i", "frame_j", "crop_i", "crop_j"];
pub const MOTIONS_HEADER: [&str; 11] = ["frame_i", "frame_j", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "source", "fragment_id"];

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

fn writer(path: &Path) -> Result<csv::Writer<File>, IoError> {
    csv::Writer::from_path(path).map_err(csv_error(path))
}

fn records(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_error(path))?;
    let found = rdr.headers().map_err(csv_error(path))?.clone();
    if found.len() < header.len() || header.iter().zip(found.iter()).any(|(a, b)| *a != b) {
        return Err(IoError::malformed(path, format!("expected header {}", header.join(","))));
    }
    rdr.records().collect::<Result<Vec<_>, _>>().map_err(csv_error(path))
}

fn field<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, k: usize, line: usize) -> Result<T, IoError> {
    row.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::malformed(path, format!("row {line}: bad or missing field {k}")))
}

/// Writes matches with coordinates and certainty rounded to 9 significant digits.
pub fn write_matches(path: &Path, set: &MatchSet) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(MATCHES_HEADER).map_err(csv_error(path))?;
    for m in &set.matches {
        let row = [m.kp_i.to_string(), m.kp_j.to_string(), nine_digits(m.x_i), nine_digits(m.y_i), nine_digits(m.x_j), nine_digits(m.y_j), nine_digits(m.certainty)];
        w.write_record(&row).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_matches(path: &Path, frame_i: usize, frame_j: usize) -> Result<MatchSet, IoError> {
    let mut matches = Vec::new();
    for (line, row) in records(path, &MATCHES_HEADER)?.iter().enumerate() {
        matches.push(Match {
            kp_i: field(path, row, 0, line)?,
            kp_j: field(path, row, 1, line)?,
            x_i: field(path, row, 2, line)?,
            y_i: field(path, row, 3, line)?,
            x_j: field(path, row, 4, line)?,
            y_j: field(path, row, 5, line)?,
            certainty: field(path, row, 6, line)?,
        });
    }
    Ok(MatchSet { frame_i, frame_j, matches })
}

/// Crop restriction of one side of a manual pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CropChoice {
    Full,
    Left,
    Right,
    Any,
}

impl CropChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            CropChoice::Full => "FULL",
            CropChoice::Left => "LEFT",
            CropChoice::Right => "RIGHT",
            CropChoice::Any => "ANY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ANY" => Some(CropChoice::Any),
            other => CropId::parse(other).map(CropChoice::from),
        }
    }

    pub fn crop(&self) -> Option<CropId> {
        match self {
            CropChoice::Full => Some(CropId::Full),
            CropChoice::Left => Some(CropId::Left),
            CropChoice::Right => Some(CropId::Right),
            CropChoice::Any => None,
        }
    }
}

impl From<CropId> for CropChoice {
    fn from(c: CropId) -> Self {
        match c {
            CropId::Full => CropChoice::Full,
            CropId::Left => CropChoice::Left,
            CropId::Right => CropChoice::Right,
        }
    }
}

/// A human-chosen frame pair, `frame_i < frame_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManualPair {
    pub frame_i: usize,
    pub frame_j: usize,
    pub crop_i: CropChoice,
    pub crop_j: CropChoice,
}

impl ManualPair {
    pub fn new(frame_i: usize, frame_j: usize) -> Self {
        Self { frame_i, frame_j, crop_i: CropChoice::Any, crop_j: CropChoice::Any }
    }

    pub fn to_frame_pair(&self) -> FramePair {
        FramePair { crop_i: self.crop_i.crop(), crop_j: self.crop_j.crop(), ..FramePair::new(self.frame_i, self.frame_j, PairSource::Manual) }
    }
}

pub fn write_manual_pairs(path: &Path, pairs: &[ManualPair]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(MANUAL_PAIRS_HEADER).map_err(csv_error(path))?;
    for p in pairs {
        w.write_record([p.frame_i.to_string(), p.frame_j.to_string(), p.crop_i.as_str().into(), p.crop_j.as_str().into()]).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_manual_pairs(path: &Path) -> Result<Vec<ManualPair>, IoError> {
    let mut out = Vec::new();
    for (line, row) in records(path, &MANUAL_PAIRS_HEADER)?.iter().enumerate() {
        let crop = |k: usize| {
            row.get(k).and_then(CropChoice::parse).ok_or_else(|| IoError::malformed(path, format!("row {line}: crop must be FULL, LEFT, RIGHT or ANY")))
        };
        let pair = ManualPair { frame_i: field(path, row, 0, line)?, frame_j: field(path, row, 1, line)?, crop_i: crop(2)?, crop_j: crop(3)? };
        if pair.frame_i >= pair.frame_j {
            return Err(IoError::malformed(path, format!("row {line}: need frame_i < frame_j")));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Writes motions with shortest round-trip floats, so re-reading is exact.
pub fn write_motions(path: &Path, records: &[MotionRecord]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(MOTIONS_HEADER).map_err(csv_error(path))?;
    for r in records {
        let [qw, qx, qy, qz] = quaternion_wxyz(&r.motion.rotation);
        let t = &r.motion.translation;
        let mut row: Vec<String> = vec![r.frame_i.to_string(), r.frame_j.to_string()];
        row.extend([qw, qx, qy, qz, t.x, t.y, t.z].iter().map(|v| format!("{v}")));
        row.push(r.source.as_str().to_string());
        row.push(r.fragment_id.map(|f| f.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_motions(path: &Path) -> Result<Vec<MotionRecord>, IoError> {
    let mut out = Vec::new();
    for (line, row) in records(path, &MOTIONS_HEADER[..10])?.iter().enumerate() {
        let v = |k: usize| field::<f64>(path, row, k, line);
        let (frame_i, frame_j) = (field(path, row, 0, line)?, field(path, row, 1, line)?);
        let rotation = stored_quaternion(v(2)?, v(3)?, v(4)?, v(5)?);
        let translation = Vector3::new(v(6)?, v(7)?, v(8)?);
        let source = row
            .get(9)
            .and_then(MotionSource::parse)
            .ok_or_else(|| IoError::malformed(path, format!("row {line}: unknown source tag")))?;
        let fragment_id = match row.get(10).unwrap_or("") {
            "" => None,
            s => Some(s.parse().map_err(|_| IoError::malformed(path, format!("row {line}: bad fragment id")))?),
        };
        out.push(MotionRecord { frame_i, frame_j, motion: RelativeMotion::new(rotation, translation, frame_i, frame_j), source, fragment_id });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use std::fs;

    #[test]
    fn matches_round_trip_to_nine_digits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matches_0_1.csv");
        let m = Match { kp_i: 3, kp_j: 9, x_i: 12.345678912345, y_i: 0.5, x_j: 799.25, y_j: 1.0 / 3.0, certainty: 0.987654321 };
        write_matches(&path, &MatchSet { frame_i: 0, frame_j: 1, matches: vec![m] }).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "kp_i,kp_j,x_i,y_i,x_j,y_j,certainty");
        assert_eq!(text.lines().nth(1).unwrap(), "3,9,12.3456789,0.5,799.25,0.333333333,0.987654321");
        let back = read_matches(&path, 0, 1).unwrap();
        assert_eq!(back.matches[0].kp_j, 9);
        assert!((back.matches[0].x_i - m.x_i).abs() < 1e-7);
    }

    #[test]
    fn manual_pairs_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manual_pairs.csv");
        let pairs = vec![ManualPair::new(10, 210), ManualPair { frame_i: 3, frame_j: 40, crop_i: CropChoice::Left, crop_j: CropChoice::Full }];
        write_manual_pairs(&path, &pairs).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "frame_i,frame_j,crop_i,crop_j\n10,210,ANY,ANY\n3,40,LEFT,FULL\n");
        assert_eq!(read_manual_pairs(&path).unwrap(), pairs);
        let fp = pairs[1].to_frame_pair();
        assert_eq!((fp.crop_i, fp.crop_j, fp.source), (Some(CropId::Left), Some(CropId::Full), PairSource::Manual));

        fs::write(&path, "frame_i,frame_j,crop_i,crop_j\n5,5,ANY,ANY\n").unwrap();
        assert!(read_manual_pairs(&path).is_err());
        fs::write(&path, "frame_i,frame_j,crop_i,crop_j\n1,5,TOP,ANY\n").unwrap();
        assert!(read_manual_pairs(&path).is_err());
    }

    #[test]
    fn motions_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("motions.csv");
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.9);
        let records = vec![
            MotionRecord::new(RelativeMotion::new(q, Vector3::new(0.1 + 0.2, -1e-300, 10.0 / 3.0), 0, 1), MotionSource::Fragment, Some(2)),
            MotionRecord::new(RelativeMotion::identity(1, 2), MotionSource::TimeJumpZero, None),
        ];
        write_motions(&path, &records).unwrap();
        let back = read_motions(&path).unwrap();
        assert_eq!(back, records);
        assert!(back[0].motion.rotation.w >= 0.0);
        assert!(fs::read_to_string(&path).unwrap().lines().nth(2).unwrap().ends_with("TIME_JUMP_ZERO,"));
    }
}
