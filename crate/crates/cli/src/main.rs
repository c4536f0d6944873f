//! `vfl`: synthetic data generation, guest/host/standalone training and PCA
//! export.
//!
//! Exit codes: 0 success, 1 usage or config, 2 handshake, 3 transport,
//! 4 data or model, 5 protocol violation. Log level comes from `VFL_LOG`
//! (default `info`).

mod commands;
mod exit;
mod job;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exit::{CmdResult, OrExit, USAGE};
use job::JobConfig;

#[derive(Debug, Parser)]
#[command(name = "vfl", version, about = "Two-party split-model training over images and tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset: tabular.csv, images/*.pgm, manifest.csv.
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        n_per_class: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the label-holding party: listens, trains, writes metrics.
    Guest {
        #[arg(long)]
        config: PathBuf,
        /// Overrides transport.guest_listen.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run the image-holding party: connects to the guest.
    Host {
        #[arg(long)]
        config: PathBuf,
        /// Overrides transport.host_connect.
        #[arg(long)]
        connect: Option<String>,
    },
    /// Train the monolithic reference model on both modalities.
    Standalone {
        #[arg(long)]
        config: PathBuf,
        /// Write per-step parameter digests (CSV) here.
        #[arg(long)]
        param_digests: Option<PathBuf>,
    },
    /// Run guest and host in one process over an in-memory transport.
    Loopback {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export a two-component PCA of the tabular features.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to output.dir.
        #[arg(long)]
        pca_out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> CmdResult<JobConfig> {
    JobConfig::load(path).or_exit(USAGE)
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::GenData {
            seed,
            n_per_class,
            image_size,
            out,
        } => commands::gen_data(seed, n_per_class, image_size, &out),
        Command::Guest { config, listen } => commands::guest(&load(&config)?, listen.as_deref()),
        Command::Host { config, connect } => commands::host(&load(&config)?, connect.as_deref()),
        Command::Standalone { config, param_digests } => {
            commands::standalone_cmd(&load(&config)?, param_digests.as_deref())
        }
        Command::Loopback { config } => commands::loopback(&load(&config)?),
        Command::Analyze { config, pca_out } => commands::analyze(&load(&config)?, pca_out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("VFL_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
