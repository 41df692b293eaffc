use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use spectropol::calib::{
    generate_calibration_targets, save_calibration, save_curve_csv, save_measurements,
    simulate_calibration_capture, simulate_scene_capture, ImagingModel,
};
use spectropol::dataio::{
    add_cube_noise, save_cube, save_dataset, synthesize_dataset, wavelength_grid, NoiseModel,
    OrbitRig, SceneSpec, SpectralCurve, Split, StokesCube,
};
use spectropol::polcore::{stokes_from_poincare, PoincareParams};
use spectropol::renderer::FrameConvention;
use spectropol::Error;

use crate::record::{parse_list, require_file, require_out, write_record};
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Canonical,
    CameraLocal,
}

impl From<Convention> for FrameConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Canonical => FrameConvention::Canonical,
            Convention::CameraLocal => FrameConvention::CameraLocal,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Scene description (JSON).
    #[arg(long)]
    pub scene: PathBuf,
    /// Training cameras on a ring around the origin.
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Held-out cameras, placed between the training cameras.
    #[arg(long, default_value_t = 1)]
    pub held_out: usize,
    /// Image width in pixels.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Ring radius in world units.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Ring elevation in degrees.
    #[arg(long, default_value_t = 30.0)]
    pub elevation: f64,
    /// Elevation of the held-out ring in degrees.
    #[arg(long, default_value_t = 20.0)]
    pub held_out_elevation: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 40.0)]
    pub fov: f64,
    /// Comma-separated wavelengths in nm.
    #[arg(long, default_value = "450,500,550,600,650")]
    pub wavelengths: String,
    /// Integration steps per blob segment.
    #[arg(long, default_value_t = 512)]
    pub subdivisions: usize,
    /// Stokes frame of the written cubes.
    #[arg(long, value_enum, default_value_t = Convention::Canonical)]
    pub convention: Convention,
    /// Also write a noisy copy with this Gaussian std (8-bit levels).
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Photon count at unit radiance for the shot-noise part (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub poisson_scale: f64,
    /// Directory of the noisy copy (default: `<out>_noisy`).
    #[arg(long)]
    pub noisy_out: Option<PathBuf>,
}

pub fn run_synth(g: &Global, a: SynthArgs) -> Result<()> {
    let out = require_out(g)?;
    require_file(&a.scene, "scene file")?;
    let wavelengths = parse_list(&a.wavelengths)?;
    let scene = SceneSpec::load(&a.scene)?;
    let noise = a
        .noise_std
        .map(|std| NoiseModel {
            gaussian_std: std,
            poisson_scale: a.poisson_scale,
        })
        .filter(|m| !m.is_noiseless());
    if let Some(m) = &noise {
        m.validate()?;
    }
    let ring = OrbitRig {
        count: a.views,
        radius: a.radius,
        elevation_deg: a.elevation,
        fov_deg: a.fov,
        width: a.width,
        height: a.height,
        phase_deg: 0.0,
    };
    let mut views: Vec<_> = ring
        .cameras()?
        .into_iter()
        .enumerate()
        .map(|(i, c)| (format!("train_{i:03}"), c, Split::Train))
        .collect();
    if a.held_out > 0 {
        let held = OrbitRig {
            count: a.held_out,
            elevation_deg: a.held_out_elevation,
            phase_deg: 180.0 / a.views.max(1) as f64,
            ..ring
        };
        views.extend(
            held.cameras()?
                .into_iter()
                .enumerate()
                .map(|(i, c)| (format!("test_{i:03}"), c, Split::Test)),
        );
    }
    info!("rendering {} views at {} wavelengths", views.len(), wavelengths.len());
    let ds = synthesize_dataset(&scene, views, &wavelengths, a.subdivisions, a.convention.into())?;
    save_dataset(&ds, &out)?;
    println!("wrote {} views to {}", ds.views.len(), out.display());

    if let Some(model) = noise {
        let noisy_dir = a.noisy_out.clone().unwrap_or_else(|| {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push("_noisy");
            out.with_file_name(name)
        });
        let mut noisy = ds.clone();
        for (i, v) in noisy.views.iter_mut().enumerate() {
            v.cube = add_cube_noise(&v.cube, &model, g.seed.wrapping_add(i as u64))?;
        }
        save_dataset(&noisy, &noisy_dir)?;
        write_record(&noisy_dir, "synth", g, &a)?;
        println!("wrote noisy copy to {}", noisy_dir.display());
    }
    write_record(&out, "synth", g, &a)
}

#[derive(Debug, Args, Serialize)]
pub struct SynthCalibArgs {
    /// Image width in pixels.
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    /// Number of known polarization states in the calibration capture.
    #[arg(long, default_value_t = 16)]
    pub targets: usize,
    /// Comma-separated QWP angles in degrees.
    #[arg(long, default_value = "-90,-45,30,60")]
    pub angles: String,
    /// Comma-separated wavelengths in nm (default: the 21-channel grid).
    #[arg(long)]
    pub wavelengths: Option<String>,
    /// Additive Gaussian noise on raw intensities.
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    /// Relative spread of the simulated LCTF rows around the ideal
    /// polarizer.
    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,
}

/// A smooth, non-ideal imaging model drawn from `rng`.
fn simulated_model(h: usize, w: usize, spread: f64, rng: &mut ChaCha8Rng) -> ImagingModel {
    let mut m = ImagingModel::ideal(h, w);
    m.sensor_qe = SpectralCurve::from_fn(|l| 0.55 + 0.35 * (-(((l - 560.0) / 90.0).powi(2))).exp());
    m.filter = SpectralCurve::from_fn(|l| 0.97 - 0.05 * ((l - 450.0) / 200.0));
    for row in m.rows.iter_mut() {
        let t = 0.5 * (1.0 + spread * rng.random_range(-1.0..1.0));
        *row = [
            t,
            t * (1.0 - spread * rng.random_range(0.0..1.0)),
            t * spread * rng.random_range(-1.0..1.0),
            t * spread * rng.random_range(-0.5..0.5),
        ];
    }
    m
}

pub fn run_synth_calib(g: &Global, a: SynthCalibArgs) -> Result<()> {
    let out = require_out(g)?;
    let angles: Vec<f64> = parse_list(&a.angles)?.iter().map(|d| d.to_radians()).collect();
    let wavelengths = match &a.wavelengths {
        Some(t) => parse_list(t)?,
        None => wavelength_grid().to_vec(),
    };
    if a.width == 0 || a.height == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let truth = simulated_model(a.height, a.width, a.spread, &mut rng);
    let targets = generate_calibration_targets(a.targets)?;
    let cal = simulate_calibration_capture(&truth, &targets, &angles, &wavelengths, a.noise_std, g.seed)?;

    let mut cube = StokesCube::zeros(a.height, a.width, wavelengths.clone());
    for r in 0..a.height {
        for c in 0..a.width {
            for l in 0..wavelengths.len() {
                let p = PoincareParams::new(
                    rng.random_range(0.1..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(-0.7..0.7),
                    rng.random_range(0.0..std::f64::consts::PI),
                );
                cube.set(r, c, l, stokes_from_poincare(&p)?);
            }
        }
    }
    let scene = simulate_scene_capture(&truth, &cube, &angles, a.noise_std, g.seed.wrapping_add(1))?;

    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    save_measurements(&cal, &out.join("calibration"))?;
    save_measurements(&scene, &out.join("scene"))?;
    save_calibration(&out.join("truth.nscl"), &truth, &angles)?;
    save_curve_csv(&out.join("sensor_qe.csv"), &truth.sensor_qe)?;
    save_curve_csv(&out.join("filter.csv"), &truth.filter)?;
    save_cube(&out.join("scene_truth.bin"), &cube, FrameConvention::CameraLocal)?;
    println!(
        "wrote calibration capture ({} targets, {} angles, {} channels) and scene capture to {}",
        targets.len(),
        angles.len(),
        wavelengths.len(),
        out.display()
    );
    write_record(&out, "synth-calib", g, &a)
}
