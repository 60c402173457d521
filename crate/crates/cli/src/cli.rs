use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "seqloc", version, about = "Relative camera motions for sparse street-level image sequences")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Pipeline configuration in TOML; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all outputs are identical for any count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory holding the manifest, warps, keypoints and outputs.
    #[arg(long, global = true, default_value = ".")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic drive and write its data directory.
    Synth {
        #[arg(long, default_value = "revisit-loop")]
        preset: String,
        /// Overrides the preset's frame count.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Propose non-consecutive pairs from embeddings and filter them by warp certainty.
    Retrieve,
    /// Match consecutive, retrieved and manual pairs; writes one matches table per pair.
    Match,
    /// Two-view motion of every consecutive pair from its dense warp.
    Estimate,
    /// Verify the matches and reconstruct fragments.
    Sfm,
    /// Combine fragments and two-view motions into the motions table.
    Assemble {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a motions table with the ground truth.
    Evaluate {
        #[arg(long)]
        motions: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Writes the per-pair errors as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sequential dense matching of consecutive pairs.
    RunMethod1 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Matching, reconstruction and assembly in one run.
    RunMethod2 {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ignores the manual pairs table.
        #[arg(long)]
        no_manual: bool,
    },
    /// HTTP API for curating manual pairs.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory with the browser bundle served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}
