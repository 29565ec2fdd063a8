// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line driver: `train`, `dump`, `analyze` and `report` over one
//! experiment configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seedstab::experiment::{
    cmd_analyze, cmd_dump, cmd_report, cmd_train, Experiment, Overrides, Which,
};

#[derive(Parser)]
#[command(
    name = "seedstab",
    version,
    about = "Seed stability of attention heads in small transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root, overriding the configuration.
    #[arg(long, env = "SEEDSTAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads, overriding the configuration.
    #[arg(long)]
    workers: Option<usize>,
    /// Anchor seed, overriding the configuration.
    #[arg(long)]
    anchor_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every refit whose checkpoint is missing or stale.
    Train(Common),
    /// Dump attention patterns, residuals and head signatures.
    Dump(Common),
    /// Run analyses over the dumps.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Comma-separated analyses, or `all`.
        #[arg(long, default_value = "all")]
        which: String,
    },
    /// Assemble tables and figures from the analysis outputs.
    Report(Common),
}

fn load(c: &Common) -> seedstab::Result<Experiment> {
    Experiment::load(
        &c.config,
        &Overrides {
            out: c.out.clone(),
            workers: c.workers,
            anchor_seed: c.anchor_seed,
        },
    )
}

fn run(cli: Cli) -> seedstab::Result<bool> {
    match cli.command {
        Command::Train(c) => {
            let s = cmd_train(&load(&c)?)?;
            println!(
                "trained {}, skipped {}, failed {}",
                s.trained.len(),
                s.skipped.len(),
                s.failed.len()
            );
            for (label, err) in &s.failed {
                eprintln!("failed: {label}: {err}");
            }
            Ok(s.failed.is_empty())
        }
        Command::Dump(c) => {
            let s = cmd_dump(&load(&c)?)?;
            println!("dumped {}, skipped {}", s.dumped.len(), s.skipped.len());
            Ok(true)
        }
        Command::Analyze { common, which } => {
            let which = Which::parse_list(&which)?;
            let s = cmd_analyze(&load(&common)?, &which)?;
            println!("ran {}, skipped {}", s.ran.len(), s.skipped.len());
            Ok(true)
        }
        Command::Report(c) => {
            let s = cmd_report(&load(&c)?)?;
            for (panel, present) in &s.panels {
                println!("{panel}: {}", if *present { "present" } else { "missing" });
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(2)
        }
    }
}
