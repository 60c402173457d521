//! Pipeline outputs do not depend on the size of the worker pool.

use std::fs;

use seqloc_core::io::{self, ManualPair};
use seqloc_core::pipeline::{run_method_one, run_method_two, PipelineConfig, SynthDataset};
use seqloc_core::synth::{generate_scene, SceneConfig};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn motions_bytes(records: &[seqloc_core::MotionRecord]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(io::MOTIONS_FILE);
    io::write_motions(&path, records).unwrap();
    fs::read(path).unwrap()
}

#[test]
fn thread_count_does_not_change_motions() {
    let cfg = SceneConfig { n_frames: 40, seed: 8, ..Default::default() };
    let ds = SynthDataset::new(generate_scene(&cfg).unwrap());
    let pipeline = PipelineConfig { seed: 8, ..Default::default() };
    let manual = [ManualPair::new(3, 30)];

    let one = in_pool(1, || run_method_two(&ds, &manual, &pipeline).unwrap());
    let four = in_pool(4, || run_method_two(&ds, &manual, &pipeline).unwrap());
    assert_eq!(motions_bytes(&one.motions), motions_bytes(&four.motions));
    assert_eq!(one.fragments, four.fragments);

    let a = in_pool(1, || run_method_one(&ds, &pipeline).unwrap());
    let b = in_pool(3, || run_method_one(&ds, &pipeline).unwrap());
    assert_eq!(motions_bytes(&a), motions_bytes(&b));
}
