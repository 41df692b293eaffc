use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod calib;
mod fields;
mod images;
mod record;
mod synth;

/// Spectro-polarimetric neural fields: synthesis, calibration, training and
/// rendering of Stokes image cubes.
#[derive(Debug, Parser)]
#[command(name = "spectropol", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct Global {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run single-threaded so results are bit-identical across machines.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SPECTROPOL_THREADS")]
    pub threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a ground-truth multi-view dataset from a scene description.
    Synth(synth::SynthArgs),
    /// Simulate a polarimeter calibration capture and a scene capture.
    SynthCalib(synth::SynthCalibArgs),
    /// Fit per-pixel LCTF rows from a calibration capture.
    Calibrate(calib::CalibrateArgs),
    /// Recover a Stokes cube from raw polarimeter images.
    Reconstruct(calib::ReconstructArgs),
    /// Fit a field to a dataset.
    Train(fields::TrainArgs),
    /// Render Stokes cubes of dataset views from a checkpoint.
    Render(fields::RenderArgs),
    /// Score a checkpoint (or rendered cubes) against a dataset.
    Eval(fields::EvalArgs),
    /// Write PNG maps of s0, DoP, AoLP, ToP and CoP.
    Visualize(images::VisualizeArgs),
    /// Split a cube into unpolarized and polarized radiance.
    Separate(images::SeparateArgs),
    /// Replace the illumination spectrum of a cube.
    Relight(images::RelightArgs),
}

/// Process exit codes.
pub mod exit {
    pub const INPUT: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const FORMAT: u8 = 4;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use spectropol::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Degenerate(_)
                | E::NonFinite(_)
                | E::RankDeficient { .. }
                | E::IllConditioned { .. }
                | E::DegenerateDataset { .. }
                | E::NonFiniteLoss { .. } => exit::NUMERIC,
                E::Format { .. } | E::Version { .. } | E::Truncated { .. } | E::Json { .. } => {
                    exit::FORMAT
                }
                _ => exit::INPUT,
            };
        }
        if let Some(code) = cause.downcast_ref::<CommandFailure>() {
            return code.0;
        }
    }
    exit::INPUT
}

/// A failure the command has already reported, with its exit code.
#[derive(Debug)]
pub struct CommandFailure(pub u8, pub String);

impl std::fmt::Display for CommandFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for CommandFailure {}

fn setup(global: &Global) -> anyhow::Result<()> {
    let level = match global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init()
        .ok();
    let threads = if global.deterministic {
        Some(1)
    } else {
        global.threads
    };
    if let Some(n) = threads {
        if n == 0 {
            anyhow::bail!(spectropol::Error::InvalidInput("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    setup(&cli.global)?;
    let g = &cli.global;
    match cli.command {
        Command::Synth(a) => synth::run_synth(g, a),
        Command::SynthCalib(a) => synth::run_synth_calib(g, a),
        Command::Calibrate(a) => calib::run_calibrate(g, a),
        Command::Reconstruct(a) => calib::run_reconstruct(g, a),
        Command::Train(a) => fields::run_train(g, a),
        Command::Render(a) => fields::run_render(g, a),
        Command::Eval(a) => fields::run_eval(g, a),
        Command::Visualize(a) => images::run_visualize(g, a),
        Command::Separate(a) => images::run_separate(g, a),
        Command::Relight(a) => images::run_relight(g, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
