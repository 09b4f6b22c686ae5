//! Command-line pipeline around `mitosis-core`: prepare, train-seg, segment,
//! train-det, detect, evaluate and visualize, all driven by one TOML config
//! and sharing a work directory.

pub mod commands;
pub mod config;
pub mod draw;
pub mod error;
pub mod workdir;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mitosis_core::dataset::SyntheticConfig;
use mitosis_core::evaluation::compare_to_published;

pub use commands::Context;
pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "mitosis", version, about = "Two-stream mitosis detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key by dotted path, e.g. `--set detector.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile frames, write ground-truth masks and the train/test split.
    Prepare(ConfigArgs),
    /// Train the U-net on the Aperio training tiles.
    TrainSeg(ConfigArgs),
    /// Predict segmentation masks for every tile.
    Segment(ConfigArgs),
    /// Train the two-stream detector.
    TrainDet(ConfigArgs),
    /// Detect mitoses in every frame.
    Detect(ConfigArgs),
    /// Score detections against the annotations.
    Evaluate(ConfigArgs),
    /// Render detection overlays.
    Visualize {
        #[command(flatten)]
        config: ConfigArgs,
        /// Frame to render (repeatable); all frames when omitted.
        #[arg(long = "frame")]
        frames: Vec<String>,
        /// Leave out ground-truth centroids and scoring circles.
        #[arg(long)]
        no_gt: bool,
    },
    /// Print the resolved configuration with every default.
    Config(ConfigArgs),
    /// Write a synthetic dataset in the native frames/annotations layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        blobs: usize,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let s = commands::prepare::run(&Context::new(a.load()?))?;
            println!(
                "prepared {} frames into {} tiles; train {} frames / {} mitoses, test {} frames / {} mitoses",
                s.frames,
                s.tiles,
                s.split.train_frame_ids.len(),
                s.split.train_mitoses,
                s.split.test_frame_ids.len(),
                s.split.test_mitoses
            );
        }
        Command::TrainSeg(a) => {
            let s = commands::train_seg::run(&Context::new(a.load()?))?;
            println!(
                "trained U-net on {} tiles: loss {:.5} -> {:.5}",
                s.tiles,
                s.initial_loss,
                s.epoch_losses.last().copied().unwrap_or(s.initial_loss)
            );
        }
        Command::Segment(a) => {
            let s = commands::segment::run(&Context::new(a.load()?))?;
            println!("wrote {} predicted masks", s.tiles);
        }
        Command::TrainDet(a) => {
            let s = commands::train_det::run(&Context::new(a.load()?))?;
            match s.losses.last() {
                Some(l) => println!("trained detector on {} tiles, final total loss {:.5}", s.tiles, l.total),
                None => println!("detector initialized (0 steps)"),
            }
        }
        Command::Detect(a) => {
            let s = commands::detect::run(&Context::new(a.load()?))?;
            println!("{} detections in {} frames", s.detections, s.frames);
        }
        Command::Evaluate(a) => {
            let report = commands::evaluate::run(&Context::new(a.load()?))?;
            print!("{}", compare_to_published(&report));
        }
        Command::Visualize { config, frames, no_gt } => {
            let opts = commands::visualize::VisualizeOptions {
                frames,
                ground_truth: !no_gt,
            };
            let stats = commands::visualize::run(&Context::new(config.load()?), &opts)?;
            println!("wrote {} overlays", stats.len());
        }
        Command::Config(a) => print!("{}", a.load()?.to_toml()),
        Command::Synth {
            out,
            frames,
            blobs,
            width,
            height,
            seed,
        } => {
            let cfg = SyntheticConfig {
                frames,
                blobs_per_frame: blobs,
                width,
                height,
                seed,
                ..SyntheticConfig::default()
            };
            let ids = commands::synth::run(&out, &cfg)?;
            println!("wrote {} synthetic frames to {}", ids.len(), out.display());
        }
    }
    Ok(())
}
