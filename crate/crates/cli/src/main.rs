//! Batch front-end for the crowd-memory toolkit.
//!
//! Subcommands: `simulate` runs a scenario and logs trajectories plus
//! ground-truth density snapshots; `fuse` builds the memory layers for one
//! observation; `plan` runs a single planner query; `evaluate` compares all
//! planning methods on one scenario instant; `reproduce` runs the bundled
//! case studies end to end.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags, schema
//! violations, missing files), 2 on runtime errors.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "crowdmem", version, about = "Crowd-aware memory fusion and path planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Rho,
    Astar,
    Cg1,
    Cg2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Memory {
    Olm,
    Pum,
    Ppum,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trajectory logs plus density snapshots.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated duration in seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.25)]
        dt: f64,
        /// Seconds between ground-truth heatmap snapshots.
        #[arg(long, default_value_t = 10.0)]
        snapshot_every: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and export the OLM, WM and fused memory layers.
    Fuse {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observation instant in seconds.
        #[arg(long, default_value_t = 60.0)]
        t_obs: f64,
        #[arg(long, default_value_t = 0.25)]
        dt: f64,
        #[arg(long, default_value_t = 12.0)]
        fov: f64,
        #[arg(long, default_value_t = 0.5)]
        bandwidth: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a single start-to-goal query with one method and memory.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::Rho)]
        method: Method,
        #[arg(long, value_enum, default_value_t = Memory::Ppum)]
        memory: Memory,
        #[arg(long, default_value_t = 60.0)]
        t_obs: f64,
        /// Seconds elapsed since the observation (fades the pum memory).
        #[arg(long, default_value_t = 0.0)]
        age: f64,
        #[arg(long, default_value_t = 0.25)]
        dt: f64,
        #[arg(long, default_value_t = 12.0)]
        fov: f64,
        #[arg(long, default_value_t = 0.5)]
        bandwidth: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every planning method on one scenario instant.
    Evaluate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Memory::Ppum)]
        memory: Memory,
        #[arg(long, default_value_t = 60.0)]
        t_obs: f64,
        #[arg(long, default_value_t = 0.25)]
        dt: f64,
        #[arg(long, default_value_t = 12.0)]
        fov: f64,
        #[arg(long, default_value_t = 0.5)]
        bandwidth: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the bundled case studies and write its report.
    Reproduce {
        /// Case study number (1, 2 or 3).
        #[arg(long)]
        case: u8,
        /// Replications: runs for case 1, maps for case 2, seeds for case 3.
        #[arg(long)]
        reps: Option<usize>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn main() -> ExitCode {
    // CROWDMEM_WORKERS caps the data-parallel worker count; rayon reads the
    // variable when it builds its global pool.
    if let Ok(workers) = std::env::var("CROWDMEM_WORKERS") {
        if workers.parse::<usize>().is_err() {
            eprintln!("configuration error: CROWDMEM_WORKERS must be a positive integer");
            return ExitCode::from(1);
        }
        std::env::set_var("RAYON_NUM_THREADS", workers);
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the same error path
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Simulate { scenario, seed, duration, dt, snapshot_every, out } => {
            commands::simulate(&scenario, seed, duration, dt, snapshot_every, &out)
        }
        Command::Fuse { scenario, seed, t_obs, dt, fov, bandwidth, out } => {
            commands::fuse(&scenario, seed, t_obs, dt, fov, bandwidth, &out)
        }
        Command::Plan { scenario, seed, method, memory, t_obs, age, dt, fov, bandwidth, out } => {
            commands::plan_query(
                &scenario, seed, method, memory, t_obs, age, dt, fov, bandwidth, &out,
            )
        }
        Command::Evaluate { scenario, seed, memory, t_obs, dt, fov, bandwidth, out } => {
            commands::evaluate(&scenario, seed, memory, t_obs, dt, fov, bandwidth, &out)
        }
        Command::Reproduce { case, reps, seed, out } => {
            commands::reproduce(case, reps, seed, &out)
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ AppError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ AppError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
