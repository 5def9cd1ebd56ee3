mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CliConfig, EngineFlags};

/// Per-source rate-limiting DDoS mitigation simulator.
#[derive(Parser)]
#[command(name = "edgeguard", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario (built-in name or JSON file) and replay it
    Simulate {
        scenario: String,
        #[command(flatten)]
        flags: EngineFlags,
    },
    /// Replay a classic pcap capture
    Replay {
        pcap: PathBuf,
        #[command(flatten)]
        flags: EngineFlags,
    },
    /// Compare datapath verdicts against the brute-force oracle
    Oracle {
        /// Scenario name, scenario JSON file or pcap file
        input: String,
        #[command(flatten)]
        flags: EngineFlags,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Pretty-print a JSON report
    Report { path: PathBuf },
}

#[derive(Debug)]
pub enum CliError {
    Divergence(usize),
    Usage(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Divergence(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { scenario, flags } => {
            commands::simulate(&scenario, &CliConfig::resolve(&flags)?)
        }
        Command::Replay { pcap, flags } => commands::replay(&pcap, &CliConfig::resolve(&flags)?),
        Command::Oracle {
            input,
            flags,
            inject_fault,
        } => commands::oracle(&input, &CliConfig::resolve(&flags)?, inject_fault),
        Command::Report { path } => commands::report(&path),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Divergence(_) => {}
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Io(msg) => eprintln!("i/o error: {msg}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
