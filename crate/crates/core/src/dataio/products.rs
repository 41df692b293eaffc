//! Image products derived from Stokes cubes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{SpectralCurve, StokesCube};
use crate::error::{Error, Result};

/// Per pixel and wavelength (`pixel·Λ + l`): unpolarized and polarized
/// radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub unpolarized: Vec<f64>,
    pub polarized: Vec<f64>,
}

pub fn separate_polarized(cube: &StokesCube) -> Separation {
    let n = cube.data.len() / 4;
    let mut unpolarized = Vec::with_capacity(n);
    let mut polarized = Vec::with_capacity(n);
    for s in cube.data.chunks_exact(4) {
        let p = (s[1] * s[1] + s[2] * s[2] + s[3] * s[3]).sqrt();
        polarized.push(p);
        unpolarized.push((s[0] - p).max(0.0));
    }
    Separation {
        unpolarized,
        polarized,
    }
}

/// Swaps the illumination spectrum: every element at wavelength `λ` is
/// scaled by `target(λ) / estimated(λ)`.
pub fn relight_spectral(
    cube: &StokesCube,
    estimated: &SpectralCurve,
    target: &SpectralCurve,
) -> Result<StokesCube> {
    let mut scale = Vec::with_capacity(cube.num_wavelengths());
    for &l in &cube.wavelengths {
        let e = estimated.at(l)?;
        if !(e > 0.0) {
            return Err(Error::InvalidInput(format!(
                "estimated illumination at {l} nm is {e}; it must be positive"
            )));
        }
        scale.push(target.at(l)? / e);
    }
    let mut out = cube.clone();
    let nl = scale.len();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v *= scale[(i / 4) % nl];
    }
    Ok(out)
}

/// Gaussian-Poisson sensor noise.
///
/// The Gaussian part has standard deviation `gaussian_std / 255` in
/// normalized units (so `16` means 16 levels of an 8-bit sensor). The
/// Poisson part treats a normalized signal `x` as `x · poisson_scale`
/// expected photons; `0` disables it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    pub gaussian_std: f64,
    pub poisson_scale: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_std >= 0.0 && self.poisson_scale >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid noise model {self:?}")));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.gaussian_std == 0.0 && self.poisson_scale == 0.0
    }

    fn normal(&self) -> Normal<f64> {
        Normal::new(0.0, self.gaussian_std / 255.0).unwrap()
    }
}

/// Adds noise to raw intensities in place: a Poisson draw with mean
/// `x · scale`, divided by `scale`, plus Gaussian read noise.
pub fn add_sensor_noise(values: &mut [f64], model: &NoiseModel, seed: u64) -> Result<()> {
    model.validate()?;
    if model.is_noiseless() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = model.normal();
    for v in values.iter_mut() {
        if model.poisson_scale > 0.0 {
            let mean = (*v * model.poisson_scale).max(0.0);
            if mean > 0.0 {
                let k: f64 = Poisson::new(mean).unwrap().sample(&mut rng);
                *v = k / model.poisson_scale;
            } else {
                *v = 0.0;
            }
        }
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

/// Adds noise to a Stokes cube. Each element gets independent Gaussian
/// noise; the shot-noise part uses the Gaussian approximation with variance
/// `s0 / scale`, since Stokes elements are differences of intensities.
pub fn add_cube_noise(cube: &StokesCube, model: &NoiseModel, seed: u64) -> Result<StokesCube> {
    model.validate()?;
    let mut out = cube.clone();
    if model.is_noiseless() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let read = model.gaussian_std / 255.0;
    for s in out.data.chunks_exact_mut(4) {
        let shot = if model.poisson_scale > 0.0 {
            s[0].max(0.0) / model.poisson_scale
        } else {
            0.0
        };
        let std = (read * read + shot).sqrt();
        for v in s.iter_mut() {
            *v += std * unit.sample(&mut rng);
        }
    }
    Ok(out)
}
