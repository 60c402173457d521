use super::{Revisit, SceneConfig, SynthError, TimeJump};

pub const PRESETS: [&str; 4] = ["continuous", "one-cut", "revisit-loop", "paper-like"];

/// Named scene configurations.
///
/// * `continuous`: 100 frames without time jumps.
/// * `one-cut`: 60 frames, relocated after a 300 s gap at frame 30.
/// * `revisit-loop`: 80 frames; after a 400 s gap at frame 40 the drive
///   repeats the street of frames 12..28 under a different appearance, so
///   retrieval misses the overlap.
/// * `paper-like`: 200 frames with three jumps, one revisit retrieval finds
///   and one it misses.
pub fn preset(name: &str, seed: u64) -> Result<SceneConfig, SynthError> {
    let base = SceneConfig { seed, ..Default::default() };
    let jump = |frame, gap_s| TimeJump { frame, gap_s };
    Ok(match name {
        "continuous" => SceneConfig { n_frames: 100, ..base },
        "one-cut" => SceneConfig { n_frames: 60, time_jumps: vec![jump(30, 300.0)], ..base },
        "revisit-loop" => SceneConfig {
            n_frames: 80,
            time_jumps: vec![jump(40, 400.0)],
            revisits: vec![Revisit { start: 40, length: 16, revisited_start: 12, appearance_shift: 0.6 }],
            ..base
        },
        "paper-like" => SceneConfig {
            n_frames: 200,
            time_jumps: vec![jump(50, 90.0), jump(120, 600.0), jump(170, 200.0)],
            revisits: vec![
                Revisit { start: 120, length: 25, revisited_start: 60, appearance_shift: 0.0 },
                Revisit { start: 170, length: 20, revisited_start: 20, appearance_shift: 0.6 },
            ],
            ..base
        },
        other => return Err(SynthError::UnknownPreset(other.to_string())),
    })
}
