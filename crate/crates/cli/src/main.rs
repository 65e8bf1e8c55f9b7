mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

/// Microwave inverse scattering with an untrained Fourier-spectral network.
#[derive(Debug, Parser)]
#[command(name = "pdf-isp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Simulate noise-free or noisy scattered data for a scene.
    Simulate(SimulateArgs),
    /// Reconstruct a permittivity map from an `.emsca` dataset.
    Reconstruct(ReconstructArgs),
    /// Run a sweep, noise, ablation or Monte Carlo study from a JSON spec.
    Study(StudyArgs),
    /// Calibrate and invert an Institut Fresnel measurement file.
    Fresnel(FresnelArgs),
    /// Render a `.grid` file as an 8-bit PGM image.
    Render(RenderArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Imaging config (JSON); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `austria`, one of `case1`..`case4`, or a scene JSON file.
    #[arg(long, default_value = "austria")]
    pub scene: String,
    /// Replace the permittivity of every shape.
    #[arg(long)]
    pub eps_r: Option<f64>,
    /// Add white Gaussian noise at this SNR (dB).
    #[arg(long)]
    pub snr: Option<f64>,
    /// Seeds the noise and the config's network initialisation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth contrast (`.grid`) for error metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Seeds the network initialisation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the loss terms of every iteration to stderr.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StudyArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Full-length Monte Carlo (100 realizations per deviation).
    #[arg(long)]
    pub full: bool,
    /// Replace the spec's seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FresnelArgs {
    /// Measurement file in the Fresnel ASCII column format.
    #[arg(long)]
    pub file: PathBuf,
    /// GHz; defaults to the lowest frequency measured by every transmitter.
    #[arg(long)]
    pub freq: Option<f64>,
    /// Imaging config; defaults to a 0.2 m domain on 64×64 cells.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Nominal target used for region metrics (`FoamDielExt`, `FoamDielInt`);
    /// inferred from the file name when omitted.
    #[arg(long)]
    pub target: Option<String>,
    /// Conjugate the measurements (opposite time convention).
    #[arg(long)]
    pub conjugate: bool,
    #[arg(long)]
    pub tx_radius: Option<f64>,
    #[arg(long)]
    pub rx_radius: Option<f64>,
    #[arg(long)]
    pub tx_step: Option<f64>,
    #[arg(long)]
    pub rx_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Output image path.
    #[arg(long)]
    pub out: PathBuf,
    /// Lower end of the grey scale (default 1, or 0 with `--contrast`).
    #[arg(long)]
    pub vmin: Option<f64>,
    /// Upper end of the grey scale (default: the map's maximum).
    #[arg(long)]
    pub vmax: Option<f64>,
    /// Render the stored contrast instead of the permittivity.
    #[arg(long)]
    pub contrast: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the replayed outputs.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
