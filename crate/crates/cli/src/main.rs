//! `rvc`: headless trials, replay, export and the session service.

mod commands;
mod serve;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Process exit codes.
pub mod exit {
    pub const DONE: u8 = 0;
    pub const ERROR: u8 = 1;
    pub const FAILED: u8 = 2;
    pub const TIMEOUT: u8 = 3;
    pub const HASH_MISMATCH: u8 = 4;
    pub const PORT_IN_USE: u8 = 5;
}

#[derive(Parser)]
#[command(name = "rvc", version, about = "Retinal vein cannulation teleoperation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted trial and write its artifacts.
    Run(RunArgs),
    /// Re-execute a trial log and check it bit for bit.
    Replay(ReplayArgs),
    /// Write CSV, summary and final B-scan for an existing log.
    Export(ExportArgs),
    /// Serve sessions over HTTP and WebSocket.
    Serve(ServeArgs),
}

/// Scenario and configuration inputs shared by several commands.
#[derive(Args, Clone)]
pub struct SimInputs {
    /// Scenario JSON; the built-in branch-vein scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Simulation config JSON; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config's step size.
    #[arg(long)]
    pub dt_ms: Option<f64>,
    /// Decide verification with the geometric classifier.
    #[arg(long)]
    pub assist: bool,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub inputs: SimInputs,
    /// Timed input script (JSON array).
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    /// Refuse unless the log was produced from this scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Refuse unless the log was produced with this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    pub log: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub inputs: SimInputs,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, env = "RVC_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Where finished and interrupted trial logs are written.
    #[arg(long, default_value = "logs")]
    pub log_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Replay(a) => commands::replay(a),
        Command::Export(a) => commands::export(a),
        Command::Serve(a) => serve::serve(a),
    };
    ExitCode::from(code)
}
