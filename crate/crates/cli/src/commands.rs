use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use seqloc_core::io::{self, ManualPair};
use seqloc_core::pipeline::{
    assemble, combine_pairs, evaluate, match_pairs, propose_and_filter, reconstruct_matches, run_method_one, run_method_two, two_view_estimates, DataDir,
    Dataset, PipelineConfig,
};
use seqloc_core::synth::{generate_scene, preset, write_products, SceneConfig};
use seqloc_core::{MotionRecord, MotionSource, PairSource};

use crate::cli::{Cli, Command, CommonArgs};
use crate::server;

/// Configuration after applying `--config` and `--seed`.
pub fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the worker pool")?;
    }
    let cfg = load_config(&cli.common)?;
    let dir = cli.common.data_dir.as_path();
    match cli.command {
        Command::Synth { preset, frames } => synth(dir, &preset, frames, &cfg),
        Command::Retrieve => retrieve(dir, &cfg),
        Command::Match => match_stage(dir, &cfg),
        Command::Estimate => estimate(dir, &cfg),
        Command::Sfm => sfm(dir, &cfg),
        Command::Assemble { out } => assemble_stage(dir, out, &cfg),
        Command::Evaluate { motions, ground_truth, report } => evaluate_stage(dir, motions, ground_truth, report),
        Command::RunMethod1 { out } => method_one(dir, out, &cfg),
        Command::RunMethod2 { out, no_manual } => method_two(dir, out, no_manual, &cfg),
        Command::Serve { addr, static_dir } => server::serve(dir.to_path_buf(), static_dir, addr),
    }
}

fn output_path(dir: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| dir.join(io::MOTIONS_FILE))
}

fn manual_pairs(dir: &Path) -> Result<Vec<ManualPair>> {
    let path = dir.join(io::MANUAL_PAIRS_FILE);
    Ok(if path.exists() { io::read_manual_pairs(&path)? } else { Vec::new() })
}

fn synth(dir: &Path, name: &str, frames: Option<usize>, cfg: &PipelineConfig) -> Result<()> {
    let scene_cfg = preset(name, cfg.seed)?;
    let scene_cfg = SceneConfig { n_frames: frames.unwrap_or(scene_cfg.n_frames), ..scene_cfg };
    let scene = generate_scene(&scene_cfg)?;
    let summary = write_products(&scene, dir, &cfg.retrieval)?;
    println!("{} frames, {} warp files for {} pairs in {}", summary.frames, summary.warp_files, summary.warp_pairs.len(), dir.display());
    Ok(())
}

fn retrieve(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let ds = DataDir::open(dir)?;
    let pairs = propose_and_filter(&ds, cfg)?;
    io::write_pairs(&dir.join(io::PROPOSED_PAIRS_FILE), &pairs)?;
    println!("{} retrieved pairs", pairs.len());
    Ok(())
}

/// Uses the stored retrieval result when present, so `match` after
/// `retrieve` sees exactly the pairs that were written.
fn match_stage(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let ds = DataDir::open(dir)?;
    let proposed_path = dir.join(io::PROPOSED_PAIRS_FILE);
    let retrieved = if !cfg.method_two.use_retrieval {
        Vec::new()
    } else if proposed_path.exists() {
        io::read_pairs(&proposed_path)?
    } else {
        propose_and_filter(&ds, cfg)?
    };
    let candidates = combine_pairs(&ds, &retrieved, &manual_pairs(dir)?, cfg)?;
    let (pairs, sets) = match_pairs(&ds, &candidates, cfg)?;
    for set in &sets {
        io::write_matches(&dir.join(io::matches_file_name(set.frame_i, set.frame_j)), set)?;
    }
    io::write_pairs(&dir.join(io::MATCHED_PAIRS_FILE), &pairs)?;
    println!("matched {} pairs, {} matches", pairs.len(), sets.iter().map(|s| s.len()).sum::<usize>());
    Ok(())
}

fn estimate(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let ds = DataDir::open(dir)?;
    let estimates = two_view_estimates(&ds, &ds.manifest().consecutive_pairs(), cfg)?;
    let records: Vec<MotionRecord> = estimates
        .iter()
        .map(|(&(i, j), m)| match m {
            Some(m) => MotionRecord::new(*m, MotionSource::TwoView, None),
            None => MotionRecord::zero(i, j, MotionSource::FailedZero),
        })
        .collect();
    io::write_motions(&dir.join(io::TWO_VIEW_FILE), &records)?;
    let failed = records.iter().filter(|r| r.source == MotionSource::FailedZero).count();
    println!("{} two-view estimates, {failed} failed", records.len());
    Ok(())
}

fn sfm(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let manifest = io::read_manifest(&dir.join(io::MANIFEST_FILE))?;
    let pairs = io::read_pairs(&dir.join(io::MATCHED_PAIRS_FILE)).context("run `match` first")?;
    let sets = pairs.iter().map(|p| io::read_matches(&dir.join(io::matches_file_name(p.frame_i, p.frame_j)), p.frame_i, p.frame_j)).collect::<Result<Vec<_>, _>>()?;
    let (geometries, fragments) = reconstruct_matches(&manifest, &sets, cfg)?;
    io::write_fragments(&dir.join(io::FRAGMENTS_FILE), &fragments)?;
    let sizes: Vec<usize> = fragments.iter().map(|f| f.frame_count()).collect();
    println!("{} verified pairs, {} fragments with sizes {sizes:?}", geometries.len(), fragments.len());
    Ok(())
}

fn assemble_stage(dir: &Path, out: Option<PathBuf>, cfg: &PipelineConfig) -> Result<()> {
    let manifest = io::read_manifest(&dir.join(io::MANIFEST_FILE))?;
    let fragments: Vec<_> = io::read_fragments(&dir.join(io::FRAGMENTS_FILE)).context("run `sfm` first")?.iter().map(|r| r.to_fragment()).collect();
    let two_view = io::read_motions(&dir.join(io::TWO_VIEW_FILE)).context("run `estimate` first")?;
    let estimates = two_view.iter().map(|r| (r.key(), (r.source != MotionSource::FailedZero).then_some(r.motion))).collect();
    let motions = assemble(&manifest, &fragments, &estimates, &cfg.assembly)?;
    let path = output_path(dir, out);
    io::write_motions(&path, &motions)?;
    println!("{} motions written to {}", motions.len(), path.display());
    Ok(())
}

fn evaluate_stage(dir: &Path, motions: Option<PathBuf>, ground_truth: Option<PathBuf>, report: Option<PathBuf>) -> Result<()> {
    let estimate = io::read_motions(&output_path(dir, motions))?;
    let truth = io::read_motions(&ground_truth.unwrap_or_else(|| dir.join(io::GROUND_TRUTH_FILE)))?;
    let result = evaluate(&estimate, &truth)?;
    println!("mean rotation error {:.3} mrad, mean translation error {:.3} m over {} pairs", result.mean_rotation_mrad, result.mean_translation_m, result.pairs.len());
    for source in MotionSource::ALL {
        if let Some(mean) = result.mean_rotation_mrad_of(source) {
            let count = result.pairs.iter().filter(|p| p.source == source).count();
            println!("  {:<15} {count:>5} pairs, {mean:.3} mrad", source.as_str());
        }
    }
    if let Some(path) = report {
        let text = serde_json::to_string_pretty(&result)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn method_one(dir: &Path, out: Option<PathBuf>, cfg: &PipelineConfig) -> Result<()> {
    let ds = DataDir::open(dir)?;
    let motions = run_method_one(&ds, cfg)?;
    let path = output_path(dir, out);
    io::write_motions(&path, &motions)?;
    let failed = motions.iter().filter(|r| r.source == MotionSource::FailedZero).count();
    println!("{} motions written to {} ({failed} failed estimates)", motions.len(), path.display());
    Ok(())
}

fn method_two(dir: &Path, out: Option<PathBuf>, no_manual: bool, cfg: &PipelineConfig) -> Result<()> {
    let ds = DataDir::open(dir)?;
    let manual = if no_manual { Vec::new() } else { manual_pairs(dir)? };
    let result = run_method_two(&ds, &manual, cfg)?;
    let retrieved: Vec<_> = result.pairs.iter().filter(|p| p.source == PairSource::Retrieved).copied().collect();
    io::write_pairs(&dir.join(io::PROPOSED_PAIRS_FILE), &retrieved)?;
    io::write_fragments(&dir.join(io::FRAGMENTS_FILE), &result.fragments)?;
    let path = output_path(dir, out);
    io::write_motions(&path, &result.motions)?;
    let sizes: Vec<usize> = result.fragments.iter().map(|f| f.frame_count()).collect();
    println!("{} motions written to {}; {} manual pairs, fragments {sizes:?}", result.motions.len(), path.display(), manual.len());
    Ok(())
}
