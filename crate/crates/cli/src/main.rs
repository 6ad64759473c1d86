//! Command-line front end for the photon-echo mode-transformation toolkit.
//!
//! Exit codes: 0 on success, 1 when a well-formed request cannot be satisfied
//! (infeasible layout, non-unitary matrix, forbidden echo collisions), 2 for
//! malformed input (bad option values, unparseable files, config errors).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CmdError;

#[derive(Parser)]
#[command(
    name = "echosim",
    version,
    about = "Pulse-schedule compiler and echo simulator for temporal-mode optics"
)]
struct Cli {
    /// TOML file overriding the physical model and the schedule layout.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an unambiguous state-discrimination design.
    Design {
        #[command(subcommand)]
        set: DesignSet,
    },
    /// Compile a matrix or a stored design into a pulse schedule.
    Compile {
        /// Design file whose embedding becomes the target.
        #[arg(long, value_name = "FILE", conflicts_with = "matrix")]
        design: Option<PathBuf>,
        /// Matrix file: dimension, then row-major re/im pairs.
        #[arg(long, value_name = "FILE")]
        matrix: Option<PathBuf>,
        /// Emit one two-mode-rotation schedule per stage instead of a single
        /// schedule (the target must be unitary).
        #[arg(long)]
        cascade: bool,
        /// Output file; stage files get a -stageN suffix. Stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Classify every echo of a schedule against its output windows.
    Lint {
        schedule: PathBuf,
    },
    /// Drive a schedule with an input state and report the echo amplitudes.
    Simulate {
        /// Schedule file to run.
        #[arg(long, value_name = "FILE", conflicts_with = "design")]
        schedule: Option<PathBuf>,
        /// Design file; its embedding is compiled with the configured layout.
        #[arg(long, value_name = "FILE")]
        design: Option<PathBuf>,
        /// Input state: semicolon-separated amplitudes, each re or re,im.
        #[arg(long, conflicts_with = "state_index")]
        state: Option<String>,
        /// Use candidate state N of the design instead of --state.
        #[arg(long, value_name = "N")]
        state_index: Option<usize>,
        /// Simulation path.
        #[arg(long, value_enum, default_value_t = SimPath::Abstract)]
        path: SimPath,
        /// Phase-noise seed (used when the model has jitter).
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write the rendered trace as CSV.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Sweep the candidate-pair half-angle and tabulate discrimination rates.
    Sweep {
        /// Comma list (0.2,0.5) or inclusive range (0.1:0.785:8) of
        /// half-angles in radians. Default: eight points over [0.1, pi/4].
        #[arg(long)]
        alphas: Option<String>,
        /// Phase-noise trials per state and half-angle.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Override the model's phase jitter sigma (radians).
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Rates CSV destination. Stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Summarise a schedule, design, trace, or rates file.
    Report {
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum DesignSet {
    /// Two equal-prior states (cos a, +-sin a) with overlap cos 2a.
    Qubit {
        /// Half-angle in radians, 0 < a <= pi/4.
        #[arg(long)]
        alpha: f64,
        /// Design file destination. Stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Three symmetric equal-prior states with the given pairwise overlap.
    Triple {
        /// Pairwise overlap s, 0 <= s < 1.
        #[arg(long)]
        overlap: f64,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Arbitrary states from a file (one per line, re/im pairs).
    Custom {
        #[arg(long, value_name = "FILE")]
        states: PathBuf,
        /// Comma-separated priors; equal priors if omitted.
        #[arg(long)]
        priors: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimPath {
    /// Mode algebra rendered around each echo.
    Abstract,
    /// FFT of the spectral response.
    Spectral,
}

fn main() -> ExitCode {
    // Die quietly instead of panicking when a pager closes the pipe early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Run(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
        Err(CmdError::Parse(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let cfg = config::load(cli.config.as_deref()).map_err(CmdError::Parse)?;
    let model = cfg.model.to_model();
    let layout = cfg.layout.to_layout().map_err(CmdError::Parse)?;
    model.validate().map_err(|e| CmdError::Parse(e.into()))?;
    layout.validate().map_err(|e| CmdError::Parse(e.into()))?;

    match cli.command {
        Command::Design { set } => match set {
            DesignSet::Qubit { alpha, out } => commands::design_qubit(alpha, out.as_deref()),
            DesignSet::Triple { overlap, out } => {
                commands::design_triple(overlap, out.as_deref())
            }
            DesignSet::Custom { states, priors, out } => {
                commands::design_custom(&states, priors.as_deref(), out.as_deref())
            }
        },
        Command::Compile { design, matrix, cascade, out } => commands::compile_cmd(
            design.as_deref(),
            matrix.as_deref(),
            cascade,
            &layout,
            out.as_deref(),
        ),
        Command::Lint { schedule } => commands::lint_cmd(&schedule),
        Command::Simulate { schedule, design, state, state_index, path, seed, out } => {
            commands::simulate_cmd(
                commands::SimulateArgs {
                    schedule: schedule.as_deref(),
                    design: design.as_deref(),
                    state: state.as_deref(),
                    state_index,
                    spectral: matches!(path, SimPath::Spectral),
                    seed,
                    out: out.as_deref(),
                },
                &model,
                &layout,
            )
        }
        Command::Sweep { alphas, trials, jitter, seed, out } => commands::sweep_cmd(
            alphas.as_deref(),
            trials,
            jitter,
            seed,
            model,
            layout,
            out.as_deref(),
        ),
        Command::Report { file } => commands::report_cmd(&file),
    }
}
