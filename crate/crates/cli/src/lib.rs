//! Command-line front end for the KSE control workbench.
//!
//! Every command reads one JSON [`config::RunConfig`], applies the
//! `--seed`, `--out` and `--mode` overrides, and writes CSV and JSON
//! artifacts into the output directory. Each artifact records the config
//! hash and seed.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use kscontrol::env::Mode;

pub mod commands;
pub mod config;

/// Invalid configuration or arguments: exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A numerical check or solve that failed: exit code 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericError(pub String);

impl fmt::Display for NumericError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numeric failure: {}", self.0)
    }
}

impl std::error::Error for NumericError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Map an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if cause.downcast_ref::<NumericError>().is_some() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<kscontrol::Error>() {
            return match e {
                kscontrol::Error::Config(_) | kscontrol::Error::ShapeMismatch(_) => EXIT_CONFIG,
                e if e.is_numeric() => EXIT_NUMERIC,
                _ => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}

#[derive(Debug, Parser)]
#[command(
    name = "kscontrol",
    version,
    about = "Symmetry-reduced RL control of the Kuramoto-Sivashinsky equation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<Mode>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the KSE and dump the trajectory.
    Simulate,
    /// Train a DDPG agent.
    Train,
    /// Ensemble evaluation with and without control.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Follow an equilibrium from a constant forcing back to the unforced equation.
    ContinueForcing {
        /// Use the long-time mean forcing of this agent instead of the configured jets.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Follow the lowest-dissipation equilibrium in the domain length.
    ContinueDomain,
    /// PBH tests, LQR gains and saturated closed-loop runs.
    Lqr {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Symmetry and equivariance audit.
    AuditSymmetry,
}

pub fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::default(),
    };
    cfg.apply_overrides(cli.seed, cli.out.clone(), cli.mode);
    cfg.validate()?;
    let ctx = commands::Context::new(cfg)?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Evaluate { checkpoint } => commands::evaluate(&ctx, checkpoint.as_deref()),
        Command::ContinueForcing { checkpoint } => commands::continue_forcing(&ctx, checkpoint.as_deref()),
        Command::ContinueDomain => commands::continue_domain(&ctx),
        Command::Lqr { checkpoint } => commands::lqr(&ctx, checkpoint.as_deref()),
        Command::AuditSymmetry => commands::audit_symmetry(&ctx),
    }
}
