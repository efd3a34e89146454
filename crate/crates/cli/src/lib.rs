//! Command-line front end: configuration, dispatch and report bundles.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fgrlab::error::FgrError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(#[from] FgrError),
    #[error("{0}")]
    Failed(String),
    #[error("artifact check: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Numerical(e) => numerical_kind(e),
            CliError::Failed(_) => "check_failed",
            CliError::Artifact(_) => "artifact",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }
}

fn numerical_kind(e: &FgrError) -> &'static str {
    match e {
        FgrError::Context { source, .. } => numerical_kind(source),
        FgrError::Shape(_) => "shape",
        FgrError::Singular(_) => "singular",
        FgrError::NoConvergence { .. } => "no_convergence",
        FgrError::Precondition(_) => "precondition",
        FgrError::Window(_) => "window_violation",
        FgrError::Stability(_) => "stability",
        FgrError::SpectralA(_) => "spectral_condition",
        FgrError::Degenerate(_) => "degenerate",
        FgrError::Extrapolation { .. } => "extrapolation",
        FgrError::Continuation { .. } => "continuation",
        FgrError::FrameLoss(_) => "frame_loss",
        FgrError::Drift { .. } => "drift",
        FgrError::Transcription(_) => "transcription",
        FgrError::Io(_) => "io",
        FgrError::Json(_) => "json",
    }
}

#[derive(Parser, Debug)]
#[command(name = "fgrlab", version, about = "Trapped NLS solitons, internal-mode radiation and Fermi golden rule coefficients")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "fgrlab-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PointArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Ground state profile and its metadata.
    Soliton {
        #[command(flatten)]
        point: PointArgs,
        /// Solve without the potential.
        #[arg(long)]
        free: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Internal mode, pairing and the spectral checks.
    Spectrum {
        #[command(flatten)]
        point: PointArgs,
        /// Weight exponent of the threshold diagnostic.
        #[arg(long, default_value_t = 2.0)]
        nu: f64,
        #[command(flatten)]
        common: Common,
    },
    /// `(L + ikε + 0)⁻¹ P_c` applied to a pair field read from JSON.
    Resolvent {
        #[arg(long, allow_negative_numbers = true)]
        k: i32,
        #[arg(long)]
        rhs: PathBuf,
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Coefficient table for the N = 2 or N = 3 chain.
    Coefficients {
        #[arg(long = "N", value_parser = clap::value_parser!(u8).range(2..=3))]
        n: u8,
        #[command(flatten)]
        point: PointArgs,
        /// Also write the resonant source `N_{N+1,0}` as a pair field.
        #[arg(long)]
        emit_source: bool,
        #[command(flatten)]
        common: Common,
    },
    /// `Re Z_{N+1,N}` by both routes.
    Fgr {
        #[arg(long = "N", value_parser = clap::value_parser!(u8).range(2..=3))]
        n: u8,
        #[command(flatten)]
        point: PointArgs,
        /// Add the sign-flipped resolvent readings.
        #[arg(long)]
        flip: bool,
        #[command(flatten)]
        common: Common,
    },
    /// `Re Z` over the `scan` grid of the config.
    #[command(name = "fgr-scan")]
    FgrScan {
        #[command(flatten)]
        common: Common,
    },
    /// Time integration and decay fit.
    Evolve {
        #[command(flatten)]
        common: Common,
    },
    /// Acceptance suite.
    Verify {
        /// Skip the robustness, dynamics and grid-doubling criteria.
        #[arg(long)]
        quick: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` (program name first), runs, and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(cli.cmd, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "kind": e.kind(), "message": e.to_string() }));
            e.exit_code()
        }
    }
}
