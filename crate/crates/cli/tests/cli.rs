//! End-to-end runs of the `seqloc` binary on a small synthetic drive.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seqloc_core::io::{self, ManualPair};
use seqloc_core::pipeline::evaluate;

fn seqloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqloc")).arg("--data-dir").arg(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = seqloc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(dir, &["--seed", "4", "synth", "--preset", "continuous", "--frames", "24"]);
}

#[test]
fn method_two_is_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    io::write_manual_pairs(&dir.join(io::MANUAL_PAIRS_FILE), &[ManualPair::new(2, 9)]).unwrap();
    let single = dir.join("single.csv");
    ok(dir, &["--seed", "4", "--threads", "1", "run-method2", "--out", single.to_str().unwrap()]);
    ok(dir, &["--seed", "4", "--threads", "4", "run-method2"]);
    assert_eq!(fs::read(single).unwrap(), fs::read(dir.join(io::MOTIONS_FILE)).unwrap());
    assert!(dir.join(io::FRAGMENTS_FILE).exists());
    assert!(dir.join(io::PROPOSED_PAIRS_FILE).exists());
}

#[test]
fn staged_commands_agree_with_method_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(dir, &["--seed", "4", "run-method2"]);
    let one_shot = io::read_motions(&dir.join(io::MOTIONS_FILE)).unwrap();

    for stage in ["retrieve", "match", "estimate", "sfm"] {
        ok(dir, &["--seed", "4", stage]);
    }
    let staged_path = dir.join("staged.csv");
    ok(dir, &["--seed", "4", "assemble", "--out", staged_path.to_str().unwrap()]);
    let staged = io::read_motions(&staged_path).unwrap();

    // Match tables keep nine significant digits, so the staged path agrees
    // to rounding rather than bit for bit.
    assert_eq!(staged.len(), one_shot.len());
    for (a, b) in staged.iter().zip(&one_shot) {
        assert_eq!((a.key(), a.source, a.fragment_id), (b.key(), b.source, b.fragment_id));
        assert!(a.motion.rotation.angle_to(&b.motion.rotation) < 1e-6);
        assert!((a.motion.translation - b.motion.translation).norm() < 1e-4);
    }
}

#[test]
fn method_one_and_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let config = dir.join("pipeline.toml");
    fs::write(&config, "seed = 4\n[assembly]\ntarget_median_translation_m = 5.0\n").unwrap();
    ok(dir, &["--config", config.to_str().unwrap(), "run-method1"]);
    let motions = io::read_motions(&dir.join(io::MOTIONS_FILE)).unwrap();
    assert_eq!(motions.len(), 23);
    assert!(motions.iter().all(|m| (m.motion.translation.norm() - 5.0).abs() < 1e-9));

    let report = dir.join("report.json");
    let stdout = ok(dir, &["evaluate", "--report", report.to_str().unwrap()]);
    let truth = io::read_motions(&dir.join(io::GROUND_TRUTH_FILE)).unwrap();
    let expected = evaluate(&motions, &truth).unwrap();
    assert!(stdout.starts_with(&format!("mean rotation error {:.3} mrad", expected.mean_rotation_mrad)), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["pairs"].as_array().unwrap().len(), 23);
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = seqloc(dir, &["run-method1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(io::MANIFEST_FILE));

    assert!(!seqloc(dir, &["--threads", "0", "retrieve"]).status.success());
    assert!(!seqloc(dir, &["synth", "--preset", "nowhere"]).status.success());
    assert!(!seqloc(dir, &["sfm"]).status.success());
}
