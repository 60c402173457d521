//! Fragment structure of Method II on small synthetic drives.

use seqloc_core::io::ManualPair;
use seqloc_core::pipeline::{evaluate, ground_truth_records, run_method_two, MethodTwoOutput, PipelineConfig, SynthDataset};
use seqloc_core::synth::{generate_scene, Revisit, SceneConfig, TimeJump};
use seqloc_core::MotionSource;

fn straight(n_frames: usize, seed: u64) -> SceneConfig {
    SceneConfig { n_frames, turn_probability: 0.0, seed, ..Default::default() }
}

fn run(cfg: &SceneConfig, manual: &[ManualPair]) -> MethodTwoOutput {
    let ds = SynthDataset::new(generate_scene(cfg).unwrap());
    run_method_two(&ds, manual, &PipelineConfig { seed: cfg.seed, ..Default::default() }).unwrap()
}

fn spans(out: &MethodTwoOutput) -> Vec<(usize, usize, usize)> {
    out.fragments.iter().map(|f| (f.frame_count(), f.frames()[0], *f.frames().last().unwrap())).collect()
}

fn source_of(out: &MethodTwoOutput, key: (usize, usize)) -> MotionSource {
    out.motions.iter().find(|m| m.key() == key).unwrap().source
}

#[test]
fn straight_drive_is_one_fragment() {
    let out = run(&straight(24, 1), &[]);
    assert_eq!(spans(&out), vec![(24, 0, 23)]);
    assert!(out.motions.iter().all(|m| m.source == MotionSource::Fragment && m.fragment_id == Some(0)));
}

#[test]
fn relocation_splits_the_drive() {
    let cfg = SceneConfig { time_jumps: vec![TimeJump { frame: 15, gap_s: 300.0 }], ..straight(30, 2) };
    let out = run(&cfg, &[]);
    let mut s = spans(&out);
    s.sort_by_key(|x| x.1);
    assert_eq!(s, vec![(15, 0, 14), (15, 15, 29)]);
    assert_eq!(source_of(&out, (14, 15)), MotionSource::TimeJumpZero);
}

#[test]
fn manual_bridge_joins_the_sessions() {
    let cfg = SceneConfig {
        time_jumps: vec![TimeJump { frame: 15, gap_s: 300.0 }],
        revisits: vec![Revisit { start: 15, length: 10, revisited_start: 3, appearance_shift: 0.6 }],
        ..straight(30, 3)
    };
    let gt = ground_truth_records(&generate_scene(&cfg).unwrap());

    let before = run(&cfg, &[]);
    assert!(before.fragments.len() >= 2, "{:?}", spans(&before));
    assert_eq!(source_of(&before, (14, 15)), MotionSource::TimeJumpZero);
    assert!(!before.pairs.iter().any(|p| p.frame_j - p.frame_i > 1), "retrieval should miss the revisit");

    let after = run(&cfg, &[ManualPair::new(8, 20)]);
    assert_eq!(spans(&after)[0], (30, 0, 29));
    assert_eq!(source_of(&after, (14, 15)), MotionSource::Fragment);

    let e_before = evaluate(&before.motions, &gt).unwrap().mean_rotation_mrad;
    let e_after = evaluate(&after.motions, &gt).unwrap().mean_rotation_mrad;
    assert!(e_after < e_before, "{e_after} vs {e_before}");
}
