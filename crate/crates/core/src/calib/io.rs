//! Capture and calibration files.
//!
//! A capture directory holds `measurements.json` and one binary32
//! little-endian file per QWP angle, each ordered (sample, wavelength,
//! pixel). A calibration file is `"NSCL"`, a `u32` version, a `u32` header
//! length, a JSON header, then the LCTF rows as binary32, pixel-major then
//! wavelength, four values each.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImagingModel;
use crate::dataio::{wavelength_grid, write_atomic, SpectralCurve, StokesCube, GRID_LEN};
use crate::error::{Error, Result};
use crate::polcore::StokesVector;

pub const CAPTURE_FILE: &str = "measurements.json";
pub const CAPTURE_VERSION: u32 = 1;
pub const CALIBRATION_MAGIC: &[u8; 4] = b"NSCL";
pub const CALIBRATION_VERSION: u32 = 1;

/// Intensities captured at several QWP angles, for `num_samples` input
/// states (calibration) or a single scene (reconstruction).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub height: usize,
    pub width: usize,
    pub wavelengths: Vec<f64>,
    /// QWP fast-axis angles, radians.
    pub angles: Vec<f64>,
    pub num_samples: usize,
    /// Known input states of a calibration capture.
    pub targets: Option<Vec<StokesVector>>,
    /// Indexed `((k·N + i)·Λ + l)·P + p`.
    pub data: Vec<f64>,
}

impl MeasurementSet {
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    fn per_angle(&self) -> usize {
        self.num_samples * self.wavelengths.len() * self.num_pixels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.len() < 4 {
            return Err(Error::InvalidInput(format!(
                "need at least 4 QWP angles, got {}",
                self.angles.len()
            )));
        }
        for &l in &self.wavelengths {
            crate::dataio::grid_index(l)?;
        }
        if let Some(t) = &self.targets {
            if t.len() != self.num_samples {
                return Err(Error::Dimension(format!(
                    "{} targets for {} samples",
                    t.len(),
                    self.num_samples
                )));
            }
        }
        if self.data.len() != self.angles.len() * self.per_angle() {
            return Err(Error::Dimension(format!(
                "capture holds {} values, expected {}",
                self.data.len(),
                self.angles.len() * self.per_angle()
            )));
        }
        Ok(())
    }

    fn index(&self, k: usize, i: usize, l: usize, p: usize) -> usize {
        ((k * self.num_samples + i) * self.wavelengths.len() + l) * self.num_pixels() + p
    }

    /// Intensities of sample `i`, wavelength `l`, pixel `p` across angles.
    pub fn intensities(&self, i: usize, l: usize, p: usize) -> Vec<f64> {
        (0..self.angles.len()).map(|k| self.data[self.index(k, i, l, p)]).collect()
    }

    fn angle_file(k: usize) -> String {
        format!("angle_{k}.bin")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureHeader {
    version: u32,
    height: usize,
    width: usize,
    wavelengths_nm: Vec<f64>,
    angles_deg: Vec<f64>,
    num_samples: usize,
    #[serde(default)]
    targets: Option<Vec<StokesVector>>,
    files: Vec<String>,
}

fn simulate(
    model: &ImagingModel,
    wavelengths: &[f64],
    angles: &[f64],
    states: &[Vec<StokesVector>],
    noise_std: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    // states[i][l·P + p]
    let np = model.num_pixels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("noise std {noise_std}: {e}")))?;
    let mut data = Vec::with_capacity(angles.len() * states.len() * wavelengths.len() * np);
    for &theta in angles {
        for st in states {
            for (l, &lambda) in wavelengths.iter().enumerate() {
                for p in 0..np {
                    let r = model.measurement_row(theta, lambda, p)?;
                    let s = &st[l * np + p];
                    let mut v: f64 = (0..4).map(|c| r[c] * s[c]).sum();
                    if noise_std > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    data.push(v);
                }
            }
        }
    }
    Ok(data)
}

/// Every pixel sees each known target in turn (a collimated source filling
/// the field of view).
pub fn simulate_calibration_capture(
    model: &ImagingModel,
    targets: &[StokesVector],
    angles: &[f64],
    wavelengths: &[f64],
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let n = model.num_pixels() * wavelengths.len();
    let states: Vec<Vec<StokesVector>> = targets.iter().map(|t| vec![*t; n]).collect();
    let set = MeasurementSet {
        height: model.height,
        width: model.width,
        wavelengths: wavelengths.to_vec(),
        angles: angles.to_vec(),
        num_samples: targets.len(),
        targets: Some(targets.to_vec()),
        data: simulate(model, wavelengths, angles, &states, noise_std, seed)?,
    };
    set.validate()?;
    Ok(set)
}

/// Raw polarimeter images of a scene whose Stokes cube (in the
/// polarimeter's local frame) is `cube`.
pub fn simulate_scene_capture(
    model: &ImagingModel,
    cube: &StokesCube,
    angles: &[f64],
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if cube.height != model.height || cube.width != model.width {
        return Err(Error::Dimension(format!(
            "cube is {}x{}, model is {}x{}",
            cube.height, cube.width, model.height, model.width
        )));
    }
    let np = cube.num_pixels();
    let nl = cube.num_wavelengths();
    let mut st = Vec::with_capacity(np * nl);
    for l in 0..nl {
        for p in 0..np {
            st.push(cube.pixel(p, l));
        }
    }
    let set = MeasurementSet {
        height: cube.height,
        width: cube.width,
        wavelengths: cube.wavelengths.clone(),
        angles: angles.to_vec(),
        num_samples: 1,
        targets: None,
        data: simulate(model, &cube.wavelengths, angles, &[st], noise_std, seed)?,
    };
    set.validate()?;
    Ok(set)
}

pub fn save_measurements(set: &MeasurementSet, dir: &Path) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per = set.per_angle();
    let mut files = Vec::with_capacity(set.angles.len());
    for k in 0..set.angles.len() {
        let name = MeasurementSet::angle_file(k);
        let mut bytes = Vec::with_capacity(per * 4);
        for v in &set.data[k * per..(k + 1) * per] {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        write_atomic(&dir.join(&name), &bytes)?;
        files.push(name);
    }
    let header = CaptureHeader {
        version: CAPTURE_VERSION,
        height: set.height,
        width: set.width,
        wavelengths_nm: set.wavelengths.clone(),
        angles_deg: set.angles.iter().map(|a| a.to_degrees()).collect(),
        num_samples: set.num_samples,
        targets: set.targets.clone(),
        files,
    };
    let path = dir.join(CAPTURE_FILE);
    write_atomic(&path, &serde_json::to_vec_pretty(&header).map_err(|e| Error::json(&path, e))?)
}

pub fn load_measurements(dir: &Path) -> Result<MeasurementSet> {
    let path = dir.join(CAPTURE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let h: CaptureHeader = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if h.version != CAPTURE_VERSION {
        return Err(Error::Version {
            found: h.version,
            expected: CAPTURE_VERSION,
        });
    }
    if h.files.len() != h.angles_deg.len() {
        return Err(Error::format(
            &path,
            format!("{} files listed for {} angles", h.files.len(), h.angles_deg.len()),
        ));
    }
    let missing: Vec<String> = h
        .files
        .iter()
        .zip(&h.angles_deg)
        .filter(|(f, _)| !dir.join(f).is_file())
        .map(|(f, a)| format!("{f} ({}°)", round_deg(*a)))
        .collect();
    if !missing.is_empty() {
        let expected: Vec<String> = h.angles_deg.iter().map(|a| format!("{}°", round_deg(*a))).collect();
        return Err(Error::InvalidInput(format!(
            "missing measurement files {}; expected one file per QWP angle [{}]",
            missing.join(", "),
            expected.join(", ")
        )));
    }
    let per = h.num_samples * h.wavelengths_nm.len() * h.height * h.width;
    let mut data = Vec::with_capacity(per * h.files.len());
    for f in &h.files {
        let p = dir.join(f);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if bytes.len() != per * 4 {
            return Err(Error::Truncated {
                view: f.clone(),
                expected: per * 4,
                found: bytes.len(),
            });
        }
        data.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
        );
    }
    let set = MeasurementSet {
        height: h.height,
        width: h.width,
        wavelengths: h.wavelengths_nm,
        angles: h.angles_deg.iter().map(|a| a.to_radians()).collect(),
        num_samples: h.num_samples,
        targets: h.targets,
        data,
    };
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationHeader {
    pub wavelengths_nm: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// QWP angles used while calibrating.
    pub angles_deg: Vec<f64>,
}

pub fn encode_calibration(model: &ImagingModel, angles: &[f64]) -> Result<Vec<u8>> {
    model.validate()?;
    let header = CalibrationHeader {
        wavelengths_nm: wavelength_grid().to_vec(),
        height: model.height,
        width: model.width,
        angles_deg: angles.iter().map(|a| a.to_degrees()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("<calibration header>", e))?;
    let mut buf = Vec::with_capacity(12 + json.len() + model.rows.len() * 16);
    buf.extend_from_slice(CALIBRATION_MAGIC);
    buf.extend_from_slice(&CALIBRATION_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in model.rows.iter().flatten() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(buf)
}

/// Parses a calibration file into a model with flat `T` and `F` curves.
pub fn decode_calibration(bytes: &[u8], path: &Path) -> Result<(ImagingModel, CalibrationHeader)> {
    if bytes.len() < 12 || &bytes[..4] != CALIBRATION_MAGIC {
        return Err(Error::format(path, "not a calibration file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CALIBRATION_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CALIBRATION_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::format(path, "calibration header is truncated"))?;
    let header: CalibrationHeader = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    if header.wavelengths_nm != wavelength_grid() {
        return Err(Error::Dimension(format!(
            "calibration grid has {} channels, expected the {GRID_LEN}-channel grid",
            header.wavelengths_nm.len()
        )));
    }
    let n = header.height * header.width * GRID_LEN;
    let payload = &bytes[12 + hlen..];
    if payload.len() != n * 16 {
        return Err(Error::Truncated {
            view: path.display().to_string(),
            expected: n * 16,
            found: payload.len(),
        });
    }
    let vals: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut model = ImagingModel::ideal(header.height, header.width);
    for (r, v) in model.rows.iter_mut().zip(vals.chunks_exact(4)) {
        *r = [v[0], v[1], v[2], v[3]];
    }
    model.validate()?;
    Ok((model, header))
}

pub fn save_calibration(path: &Path, model: &ImagingModel, angles: &[f64]) -> Result<()> {
    write_atomic(path, &encode_calibration(model, angles)?)
}

pub fn load_calibration(path: &Path) -> Result<(ImagingModel, CalibrationHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_calibration(&bytes, path)
}

/// Writes a curve as `wavelength_nm,value` CSV.
pub fn save_curve_csv(path: &Path, curve: &SpectralCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["wavelength_nm", "value"]).map_err(csv_err)?;
    for (l, v) in wavelength_grid().iter().zip(curve.0) {
        w.write_record([l.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a two-column `wavelength_nm,value` CSV covering the 21-channel
/// grid.
pub fn load_curve_csv(path: &Path) -> Result<SpectralCurve> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = [f64::NAN; GRID_LEN];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: column {} is not a number", line + 2, i + 1)))
        };
        let l = parse(0)?;
        out[crate::dataio::grid_index(l)?] = parse(1)?;
    }
    if let Some(i) = out.iter().position(|v| v.is_nan()) {
        return Err(Error::format(
            path,
            format!("no value for {} nm", wavelength_grid()[i]),
        ));
    }
    Ok(SpectralCurve(out))
}

fn round_deg(a: f64) -> f64 {
    (a * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_bytes_round_trip() {
        let mut m = ImagingModel::ideal(2, 3);
        m.set_row(630.0, 4, [0.49, 0.41, 0.02, -0.01]).unwrap();
        let bytes = encode_calibration(&m, &[0.0, 0.5, 1.0, 1.5]).unwrap();
        let (back, h) = decode_calibration(&bytes, Path::new("cal")).unwrap();
        assert_eq!(h.height, 2);
        assert_eq!(h.angles_deg.len(), 4);
        assert!((back.row(630.0, 4).unwrap()[1] - 0.41).abs() < 1e-7);
        assert!(decode_calibration(&bytes[..bytes.len() - 2], Path::new("cal")).is_err());
    }
}
