use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use spectropol::calib::{
    calibrate, load_calibration, load_curve_csv, load_measurements, reconstruct_cube,
    save_calibration, ImagingModel, PixelFailure,
};
use spectropol::dataio::save_cube;
use spectropol::renderer::FrameConvention;

use crate::record::{require_dir, require_file, require_out, write_record};
use crate::{exit, CommandFailure, Global};

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Calibration capture directory.
    #[arg(long)]
    pub capture: PathBuf,
    /// Sensor quantum efficiency curve (CSV); flat when omitted.
    #[arg(long)]
    pub sensor_qe: Option<PathBuf>,
    /// Cut-off filter transmission curve (CSV); flat when omitted.
    #[arg(long)]
    pub filter: Option<PathBuf>,
}

fn apply_curves(
    model: &mut ImagingModel,
    qe: &Option<PathBuf>,
    filter: &Option<PathBuf>,
) -> Result<()> {
    if let Some(p) = qe {
        require_file(p, "sensor QE curve")?;
        model.sensor_qe = load_curve_csv(p)?;
    }
    if let Some(p) = filter {
        require_file(p, "filter curve")?;
        model.filter = load_curve_csv(p)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ResidualStats {
    count: usize,
    mean: f64,
    max: f64,
}

fn residual_stats(values: &[f64]) -> ResidualStats {
    let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    ResidualStats {
        count: ok.len(),
        mean: ok.iter().sum::<f64>() / ok.len().max(1) as f64,
        max: ok.iter().copied().fold(0.0, f64::max),
    }
}

fn report_failures(what: &str, failures: &[PixelFailure]) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in failures.iter().take(20) {
        eprintln!(
            "  pixel (row {}, col {}) at {} nm: {}",
            f.row, f.col, f.wavelength_nm, f.message
        );
    }
    if failures.len() > 20 {
        eprintln!("  ... and {} more", failures.len() - 20);
    }
    Err(CommandFailure(
        exit::NUMERIC,
        format!("{what} failed at {} pixel/channel entries; nothing written", failures.len()),
    )
    .into())
}

pub fn run_calibrate(g: &Global, a: CalibrateArgs) -> Result<()> {
    let out = require_out(g)?;
    require_dir(&a.capture, "capture")?;
    let capture = load_measurements(&a.capture)?;
    let mut base = ImagingModel::ideal(capture.height, capture.width);
    apply_curves(&mut base, &a.sensor_qe, &a.filter)?;
    let result = calibrate(&base, &capture)?;
    report_failures("calibration", &result.failures)?;
    let stats = residual_stats(&result.residuals);
    save_calibration(&out, &result.model, &capture.angles)?;
    println!(
        "calibrated {}x{} pixels at {} channels; residual norm mean {:.3e}, max {:.3e}",
        capture.height,
        capture.width,
        capture.wavelengths.len(),
        stats.mean,
        stats.max
    );
    write_record(&out, "calibrate", g, &(&a, stats))
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Raw scene capture directory.
    #[arg(long)]
    pub capture: PathBuf,
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Sensor quantum efficiency curve (CSV); flat when omitted.
    #[arg(long)]
    pub sensor_qe: Option<PathBuf>,
    /// Cut-off filter transmission curve (CSV); flat when omitted.
    #[arg(long)]
    pub filter: Option<PathBuf>,
}

pub fn run_reconstruct(g: &Global, a: ReconstructArgs) -> Result<()> {
    let out = require_out(g)?;
    require_dir(&a.capture, "capture")?;
    require_file(&a.calibration, "calibration file")?;
    let capture = load_measurements(&a.capture)?;
    let (mut model, _) = load_calibration(&a.calibration)?;
    apply_curves(&mut model, &a.sensor_qe, &a.filter)?;
    let result = reconstruct_cube(&model, &capture)?;
    report_failures("reconstruction", &result.failures)?;
    let stats = residual_stats(&result.residuals);
    save_cube(&out, &result.cube, FrameConvention::CameraLocal)?;
    let total = result.cube.num_pixels() * result.cube.num_wavelengths();
    println!(
        "reconstructed {}x{}x{} cube; residual norm mean {:.3e}, max {:.3e}",
        result.cube.height,
        result.cube.width,
        result.cube.num_wavelengths(),
        stats.mean,
        stats.max
    );
    println!(
        "validity: {} of {total} Stokes vectors violate s0 >= |s_pol|",
        result.invalid
    );
    write_record(&out, "reconstruct", g, &(&a, stats, result.invalid))
}
