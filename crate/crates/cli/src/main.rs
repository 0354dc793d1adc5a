//! `qpl-workbench`: design sweeps, emission reports, photon-statistics fits
//! and synthetic data for plasmon-launcher single-photon sources.
//!
//! Exit codes: 0 success, 1 error, 2 fit flagged degenerate, 64 usage error,
//! 65 unreadable or invalid configuration.

mod config;
mod fits;
mod output;
mod physics;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::{ConfigError, WorkbenchConfig};

pub const EXIT_DEGENERATE: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_CONFIG: u8 = 65;

#[derive(Debug, Parser)]
#[command(name = "qpl-workbench", version, about = "Plasmon-launcher emission design and photon-statistics workbench")]
pub struct Cli {
    /// Workbench config file (TOML); falls back to $QPL_WORKBENCH_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the material models and their permittivity at the stack wavelength.
    Materials(physics::MaterialsArgs),
    /// Bound TM modes of the stack as CSV (n_eff_re, n_eff_im, L_um).
    Modes(physics::ModesArgs),
    /// Decay-rate summary of the configured dipole.
    Dipole,
    /// Dissipated-power spectrum over the in-plane wavevector.
    Spectrum(physics::SpectrumArgs),
    /// Far-field radiation pattern into the upper half-space.
    Pattern,
    /// DRE, beta_SPP, xi and beta_NF maps over gap and cap thickness.
    Sweep(physics::SweepArgs),
    /// Decay channels against the dipole height in the emitter layer.
    ScanZ(physics::ScanZArgs),
    /// Generate a synthetic time-tag stream from the [sim] section.
    SimulateStream(physics::SimulateArgs),
    /// Second-order correlation of a stream or a g2 curve.
    FitG2(fits::G2Args),
    /// Multi-exponential lifetime fit with IRF reconvolution.
    FitLifetime(fits::LifetimeArgs),
    /// Saturation curve with a linear background.
    FitSaturation(fits::SaturationArgs),
    /// Propagation length from ring intensities against distance.
    FitPropagation(fits::PropagationArgs),
    /// Plasmon branching ratio from spot and ring counts.
    ExtractBranching(fits::BranchingArgs),
    /// Regenerate a reference artifact with a pass/fail summary.
    Reproduce(reproduce::ReproduceArgs),
}

/// A completed command whose result is flagged as degenerate.
#[derive(Debug)]
pub struct Degenerate(pub String);

impl std::fmt::Display for Degenerate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "degenerate fit: {}", self.0)
    }
}

impl std::error::Error for Degenerate {}

/// Context handed to every command.
pub struct Ctx {
    pub config: WorkbenchConfig,
    pub out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let path = config::resolve_path(cli.config.as_deref());
    let config = config::load(path.as_deref())?;
    let ctx = Ctx {
        out: config.output_dir(cli.out.as_deref()),
        config,
    };
    match cli.command {
        Command::Materials(a) => physics::materials(&ctx, &a),
        Command::Modes(a) => physics::modes(&ctx, &a),
        Command::Dipole => physics::dipole(&ctx),
        Command::Spectrum(a) => physics::spectrum(&ctx, &a),
        Command::Pattern => physics::pattern(&ctx),
        Command::Sweep(a) => physics::sweep(&ctx, &a),
        Command::ScanZ(a) => physics::scan_z(&ctx, &a),
        Command::SimulateStream(a) => physics::simulate_stream(&ctx, &a),
        Command::FitG2(a) => fits::fit_g2(&ctx, &a),
        Command::FitLifetime(a) => fits::fit_lifetime(&ctx, &a),
        Command::FitSaturation(a) => fits::fit_saturation(&ctx, &a),
        Command::FitPropagation(a) => fits::fit_propagation(&ctx, &a),
        Command::ExtractBranching(a) => fits::extract_branching(&ctx, &a),
        Command::Reproduce(a) => reproduce::reproduce(&ctx, &a),
    }
}

/// Parse `argv` and run; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) if e.downcast_ref::<Degenerate>().is_some() => {
            eprintln!("{e}");
            EXIT_DEGENERATE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args_os()))
}
