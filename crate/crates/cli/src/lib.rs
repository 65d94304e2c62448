//! Experiment runner: parses flags and configuration, dispatches to the
//! library, writes outputs plus a replayable manifest.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! failure (including failed probe checks and replay mismatches), 4 budget
//! refusal.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::Config;
pub use manifest::{RunManifest, Task};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Budget(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Budget(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Budget(m) => write!(f, "refused: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<randnls::Error> for CliError {
    fn from(e: randnls::Error) -> Self {
        use randnls::Error as E;
        match e {
            E::InvalidParameter(_) | E::GridTooSmall { .. } | E::Format(_) => CliError::Config(e.to_string()),
            E::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            E::Io(io) => CliError::Io(io.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "randnls", version, about = "Cubic NLS on the torus with randomized data")]
pub struct Cli {
    /// TOML configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run parameters outside the admissible regime.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw randomized initial data.
    Sample,
    /// Free evolution of the sampled data on [0, δ].
    Evolve,
    /// Gauged Picard solve, ungauging and direct cross-check.
    Solve {
        /// Force every coefficient to zero.
        #[arg(long)]
        zero_data: bool,
    },
    /// Lattice-point counts; flags replace the configured queries.
    Count {
        #[arg(long, value_parser = ["sphere"])]
        kind: Option<String>,
        #[arg(long)]
        d: Option<usize>,
        /// Squared radius.
        #[arg(long = "A")]
        radius_sq: Option<u64>,
    },
    /// Norm table of free evolutions.
    Norm,
    /// Run one probe.
    Probe { id: String },
    /// Re-run a manifest and compare outputs byte for byte.
    Replay { manifest: PathBuf },
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    if let Some(n) = cli.threads {
        // a second initialization (tests) keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    if let Command::Replay { manifest } = &cli.command {
        let out = if cli.out == PathBuf::from("out") { None } else { Some(cli.out.clone()) };
        return manifest::replay(manifest, out.as_deref());
    }
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    let task = match cli.command {
        Command::Sample => Task::Sample,
        Command::Evolve => Task::Evolve,
        Command::Solve { zero_data } => {
            config.run.zero_data |= zero_data;
            Task::Solve
        }
        Command::Count { kind, d, radius_sq } => {
            if kind.is_some() || d.is_some() || radius_sq.is_some() {
                let (Some(d), Some(radius_sq)) = (d, radius_sq) else {
                    return Err(CliError::Config("count flags need both --d and --A".into()));
                };
                config.count.queries = vec![randnls::counting::CountQuery::Sphere { d, radius_sq }];
            }
            Task::Count
        }
        Command::Norm => Task::Norm,
        Command::Probe { id } => {
            if !randnls::probes::PROBE_IDS.contains(&id.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown probe {id:?}; expected one of {}",
                    randnls::probes::PROBE_IDS.join(", ")
                )));
            }
            Task::Probe { id }
        }
        Command::Replay { .. } => unreachable!(),
    };
    config.validate()?;
    let status = manifest::execute(&task, &config, cli.force, &cli.out)?;
    Ok(status)
}
