use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use spectropol::calib::load_curve_csv;
use spectropol::dataio::{
    fit_spectral_polynomial, grid_index, load_cube, relight_spectral, save_cube, separate_polarized,
    spectrum_to_rgb, wavelength_grid, write_atomic, SpectralCurve, StokesCube, GRID_LEN,
};
use spectropol::polcore::summarize_polarization;
use spectropol::Error;

use crate::record::{require_file, require_out, write_json, write_record};
use crate::Global;

fn encode_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(rgb)?;
    }
    Ok(buf)
}

fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_atomic(path, &encode_png(width, height, rgb)?)?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn gray(v: f64) -> [u8; 3] {
    [to_byte(v); 3]
}

/// Fully saturated hue wheel over `[0, π)`: 0 is red, π/3 green, 2π/3 blue.
pub fn hue_wheel(angle: f64) -> [u8; 3] {
    let h = (angle / std::f64::consts::PI).rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [to_byte(r), to_byte(g), to_byte(b)]
}

/// Blue for left-handed (−1), white for none, red for right-handed (+1).
pub fn diverging(sign: i8) -> [u8; 3] {
    match sign {
        s if s < 0 => [0, 0, 255],
        0 => [255, 255, 255],
        _ => [255, 0, 0],
    }
}

const UNDEFINED: [u8; 3] = [0, 0, 0];

#[derive(Debug, Args, Serialize)]
pub struct VisualizeArgs {
    /// Stokes cube file.
    #[arg(long)]
    pub cube: PathBuf,
    /// s0 value mapped to white (default: the cube maximum).
    #[arg(long)]
    pub s0_max: Option<f64>,
}

fn load(path: &Path) -> Result<(StokesCube, spectropol::renderer::FrameConvention)> {
    require_file(path, "cube")?;
    Ok(load_cube(path)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn max_s0(cube: &StokesCube) -> f64 {
    cube.data.chunks_exact(4).map(|s| s[0]).fold(0.0, f64::max)
}

pub fn run_visualize(g: &Global, a: VisualizeArgs) -> Result<()> {
    let out = require_out(g)?;
    let (cube, convention) = load(&a.cube)?;
    let s0_max = a.s0_max.unwrap_or_else(|| max_s0(&cube));
    if !(s0_max > 0.0) {
        return Err(Error::InvalidInput(format!("s0 scale must be positive, got {s0_max}")).into());
    }
    create_dir(&out)?;
    let (w, h) = (cube.width, cube.height);
    let n = cube.num_pixels();
    let mut files = Vec::new();
    for (l, &nm) in cube.wavelengths.iter().enumerate() {
        let mut maps = [(); 5].map(|_| Vec::with_capacity(3 * n));
        for p in 0..n {
            let s = cube.pixel(p, l);
            let px = match summarize_polarization(&s) {
                Ok(sum) => {
                    let linear = s.s1() != 0.0 || s.s2() != 0.0;
                    [
                        gray(s.s0() / s0_max),
                        gray(sum.dop),
                        if linear { hue_wheel(sum.aolp) } else { UNDEFINED },
                        gray(sum.top),
                        diverging(sum.cop),
                    ]
                }
                Err(_) => [gray(0.0), UNDEFINED, UNDEFINED, UNDEFINED, UNDEFINED],
            };
            for (m, c) in maps.iter_mut().zip(px) {
                m.extend_from_slice(&c);
            }
        }
        for (name, data) in ["s0", "dop", "aolp", "top", "cop"].iter().zip(&maps) {
            let file = format!("{name}_{nm:.0}nm.png");
            write_png(&out.join(&file), w, h, data)?;
            files.push(file);
        }
    }
    // a colour preview needs the whole visible grid
    let on_grid = cube.wavelengths.len() == GRID_LEN
        && cube.wavelengths.iter().zip(wavelength_grid()).all(|(a, b)| *a == b);
    if on_grid {
        let mut rgb = Vec::with_capacity(3 * n);
        for p in 0..n {
            let curve = SpectralCurve(std::array::from_fn(|l| cube.pixel(p, l).s0() / s0_max));
            rgb.extend(spectrum_to_rgb(&curve).encoded.map(to_byte));
        }
        write_png(&out.join("rgb.png"), w, h, &rgb)?;
        files.push("rgb.png".into());
    }
    let sidecar = json!({
        "source": a.cube,
        "frame_convention": convention,
        "width": w,
        "height": h,
        "wavelengths_nm": cube.wavelengths,
        "files": files,
        "colormaps": {
            "s0": {"map": "gray", "range": [0.0, s0_max]},
            "dop": {"map": "gray", "range": [0.0, 1.0]},
            "aolp": {"map": "cyclic hue wheel (0 red, pi/3 green, 2pi/3 blue)", "range_rad": [0.0, std::f64::consts::PI]},
            "top": {"map": "gray", "range": [0.0, 1.0]},
            "cop": {"map": "diverging", "-1": "blue", "0": "white", "+1": "red"},
            "rgb": {"map": "CIE 1931 s0 spectrum to sRGB, white balanced", "range": [0.0, s0_max]},
            "undefined": "black (s0 <= 0, or no linear polarization for aolp)"
        }
    });
    write_json(&out.join("visualize.json"), &sidecar)?;
    println!("wrote {} images to {}", files.len(), out.display());
    write_record(&out, "visualize", g, &a)
}

#[derive(Debug, Args, Serialize)]
pub struct SeparateArgs {
    #[arg(long)]
    pub cube: PathBuf,
}

pub fn run_separate(g: &Global, a: SeparateArgs) -> Result<()> {
    let out = require_out(g)?;
    let (cube, convention) = load(&a.cube)?;
    let sep = separate_polarized(&cube);
    let mut unpolarized = StokesCube::zeros(cube.height, cube.width, cube.wavelengths.clone());
    let mut polarized = cube.clone();
    for (i, (u, s)) in sep.unpolarized.iter().zip(polarized.data.chunks_exact_mut(4)).enumerate() {
        unpolarized.data[4 * i] = *u;
        s[0] = sep.polarized[i];
    }
    create_dir(&out)?;
    save_cube(&out.join("unpolarized.bin"), &unpolarized, convention)?;
    save_cube(&out.join("polarized.bin"), &polarized, convention)?;
    let scale = max_s0(&cube).max(f64::MIN_POSITIVE);
    let n = cube.num_pixels();
    let nl = cube.num_wavelengths();
    for (l, nm) in cube.wavelengths.iter().enumerate() {
        for (name, values) in [("unpolarized", &sep.unpolarized), ("polarized", &sep.polarized)] {
            let img: Vec<u8> = (0..n).flat_map(|p| gray(values[p * nl + l] / scale)).collect();
            write_png(&out.join(format!("{name}_{nm:.0}nm.png")), cube.width, cube.height, &img)?;
        }
    }
    println!("wrote unpolarized and polarized components to {}", out.display());
    write_record(&out, "separate", g, &a)
}

#[derive(Debug, Args, Serialize)]
pub struct RelightArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Target illumination spectrum (CSV on the 21-channel grid).
    #[arg(long)]
    pub target: PathBuf,
    /// Current illumination spectrum (CSV on the 21-channel grid).
    #[arg(long, conflicts_with = "white_pixel")]
    pub estimated: Option<PathBuf>,
    /// Estimate the current illumination from the s0 spectrum of a white
    /// pixel, given as `row,col`, smoothed by a quartic fit.
    #[arg(long)]
    pub white_pixel: Option<String>,
}

fn parse_pixel(text: &str, cube: &StokesCube) -> Result<(usize, usize)> {
    let parts: Vec<_> = text.split(',').map(|t| t.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(r), Ok(c)] if *r < cube.height && *c < cube.width => Ok((*r, *c)),
        _ => Err(Error::InvalidInput(format!(
            "white pixel `{text}` is not `row,col` inside the {}x{} image",
            cube.height, cube.width
        ))
        .into()),
    }
}

pub fn run_relight(g: &Global, a: RelightArgs) -> Result<()> {
    let out = require_out(g)?;
    let (cube, convention) = load(&a.cube)?;
    require_file(&a.target, "target spectrum")?;
    let target = load_curve_csv(&a.target)?;
    for &l in &cube.wavelengths {
        grid_index(l)?;
    }
    let estimated = match (&a.estimated, &a.white_pixel) {
        (Some(p), None) => {
            require_file(p, "estimated spectrum")?;
            load_curve_csv(p)?
        }
        (None, Some(px)) => {
            let (r, c) = parse_pixel(px, &cube)?;
            let values: Vec<f64> = (0..cube.num_wavelengths()).map(|l| cube.get(r, c, l).s0()).collect();
            fit_spectral_polynomial(&cube.wavelengths, &values)?.eval_grid()
        }
        _ => {
            return Err(
                Error::InvalidInput("pass exactly one of --estimated or --white-pixel".into()).into(),
            )
        }
    };
    let relit = relight_spectral(&cube, &estimated, &target)?;
    save_cube(&out, &relit, convention)?;
    println!("wrote relit cube to {}", out.display());
    write_record(&out, "relight", g, &a)
}
