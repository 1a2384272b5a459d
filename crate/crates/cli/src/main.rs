//! `hgtul`: preprocess check-ins, train, evaluate and ablate the
//! trajectory-user linking model, or generate a synthetic corpus.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hgtul::data::Part;
use hgtul::error::{ArtifactError, CheckpointError, DataError};
use hgtul::Error;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "hgtul",
    version,
    about = "Trajectory-user linking with a hypergraph attention network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags override the config file.
#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of this command: split seed for preprocess, init seed for train/ablate, generator seed for synth
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, segment, split and balance a check-in file
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Check-in file
        #[arg(long)]
        input: Option<PathBuf>,
        /// canonical_tsv, gowalla_raw or foursquare_raw
        #[arg(long)]
        format: Option<String>,
    },
    /// Train on a preprocessed directory
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `preprocess`
        #[arg(long)]
        data: Option<PathBuf>,
        /// Variant to train: full, a, ap, s, l, h, d (join with `+` to combine, e.g. `a+d`)
        #[arg(long)]
        variant: Option<String>,
        /// Number of runs, seeded `seed, seed+1, ...`
        #[arg(long)]
        repeat: Option<usize>,
    },
    /// Evaluate a checkpoint
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `preprocess`
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Representation assembly to evaluate with; defaults to the checkpoint's variant
        #[arg(long)]
        variant: Option<String>,
        /// train, valid or test
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// Train and test several variants
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `preprocess`
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated variants; `+` combines ablations within one entry
        #[arg(long, default_value = commands::ALL_VARIANTS)]
        variant: String,
        /// Number of runs, seeded `seed, seed+1, ...`
        #[arg(long)]
        repeat: Option<usize>,
    },
    /// Generate a synthetic check-in corpus
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

/// Exit status per failing module.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Data(DataError::Io(_))
        | Error::Checkpoint(CheckpointError::Io(_))
        | Error::Artifact(ArtifactError::Io { .. }) => 3,
        Error::Config(_) => 4,
        Error::Data(_) => 10,
        Error::Encoding(_) => 11,
        Error::Hypergraph(_) => 12,
        Error::Model(_) => 13,
        Error::Train(_) => 14,
        Error::Checkpoint(_) => 15,
        Error::Eval(_) => 16,
        Error::Artifact(_) => 17,
    }
}

fn base_config(common: &Common) -> Result<RunConfig, Error> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn invalid(key: &str, msg: String) -> Error {
    hgtul::error::ConfigError::Invalid {
        key: key.into(),
        msg,
    }
    .into()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Preprocess {
            common,
            input,
            format,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.input = input.or(cfg.input);
            if let Some(f) = format {
                cfg.input_format = f.parse().map_err(|m| invalid("format", m))?;
            }
            if let Some(s) = common.seed {
                cfg.prep.split_seed = s;
            }
            commands::preprocess_cmd(&cfg, &common.out)
        }
        Command::Train {
            common,
            data,
            variant,
            repeat,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.data_dir = data.or(cfg.data_dir);
            cfg.variant = variant.unwrap_or(cfg.variant);
            cfg.repeat = repeat.unwrap_or(cfg.repeat);
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            commands::train_cmd(&cfg, &common.out)
        }
        Command::Evaluate {
            common,
            data,
            checkpoint,
            variant,
            part,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.data_dir = data.or(cfg.data_dir);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            let part = Part::parse(&part)
                .ok_or_else(|| invalid("part", format!("unknown part {part:?}")))?;
            commands::evaluate_cmd(&cfg, variant.as_deref(), part, &common.out)
        }
        Command::Ablate {
            common,
            data,
            variant,
            repeat,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.data_dir = data.or(cfg.data_dir);
            cfg.repeat = repeat.unwrap_or(cfg.repeat);
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            commands::ablate_cmd(&cfg, &variant, &common.out)
        }
        Command::Synth { common } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = common.seed {
                cfg.synth.seed = s;
            }
            commands::synth(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
