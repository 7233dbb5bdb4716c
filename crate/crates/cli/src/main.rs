use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaitgcn::net::Depth;
use gaitgcn::PartitionStrategy;

mod commands;
mod config;

use config::RunConfig;

/// Skeleton-based gait identification: synthesize data, train, evaluate, embed.
#[derive(Debug, Parser)]
#[command(name = "gaitgcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic walker dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Regenerate exactly the dataset described by this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train on the protocol's training identities.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Rank-1 accuracy of a checkpoint on the protocol's test identities.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the gallery as its own probe set (every cell should be 100%).
        #[arg(long)]
        gallery_as_probe: bool,
    },
    /// Write the 256-d embedding of one sequence directory.
    Embed {
        #[command(flatten)]
        common: CommonArgs,
        /// Sequence directory, e.g. `data/001-nm-01-090`.
        #[arg(long)]
        sequence: PathBuf,
    },
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_partition)]
    partition: Option<PartitionStrategy>,
    #[arg(long, value_parser = parse_depth)]
    depth: Option<Depth>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint to write (train) or read (eval, embed).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn parse_partition(s: &str) -> Result<PartitionStrategy, String> {
    s.parse().map_err(|e: gaitgcn::Error| e.to_string())
}

fn parse_depth(s: &str) -> Result<Depth, String> {
    s.parse().map_err(|e: gaitgcn::Error| e.to_string())
}

impl CommonArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.data_dir {
            cfg.data.dir = dir.clone();
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
        if let Some(p) = self.partition {
            cfg.network.partition = p;
        }
        if let Some(d) = self.depth {
            cfg.network.depth = d;
        }
        if let Some(m) = self.margin {
            cfg.train.margin = m;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { common, manifest } => commands::synth(&common.resolve()?, manifest.as_deref()),
        Command::Train { common } => commands::train(&common.resolve()?, common.checkpoint.as_deref()),
        Command::Eval {
            common,
            gallery_as_probe,
        } => commands::eval(&common.resolve()?, common.checkpoint.as_deref(), gallery_as_probe),
        Command::Embed { common, sequence } => {
            commands::embed(&common.resolve()?, common.checkpoint.as_deref(), &sequence)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
