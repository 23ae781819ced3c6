//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
//! 3 background certification failure, 4 solver failure, 5 property
//! violation.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "pcurve",
    version,
    about = "Prescribed p-curvature solver on periodic grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "PCURVE_OUT")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the continuation solve.
    Solve,
    /// Run the property matrix.
    Verify,
    /// Grid refinement study against a manufactured solution.
    Converge,
    /// Certify the background tensor only.
    Certify,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: msg.to_string(),
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: msg.to_string(),
        }
    }

    pub fn certification(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            message: msg.to_string(),
        }
    }

    pub fn solver(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 4,
            message: msg.to_string(),
        }
    }

    pub fn property(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 5,
            message: msg.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        // Fails only if the pool already exists, e.g. a second call in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config <path> is required"))?;
    let cfg = Config::load(path).map_err(CliError::validation)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("pcurve-out"));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
    let ctx = commands::Context {
        config: cfg,
        base_dir: base,
        out_dir: out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Solve => commands::run_solve(&ctx),
        Command::Verify => commands::run_verify(&ctx),
        Command::Converge => commands::run_convergence(&ctx),
        Command::Certify => commands::run_certify(&ctx),
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
