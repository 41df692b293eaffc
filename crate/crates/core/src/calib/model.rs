use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{grid_index, wavelength_grid, SpectralCurve, GRID_LEN};
use crate::error::{Error, Result};
use crate::polcore::{linear_polarizer_mueller, qwp_mueller, StokesVector};

/// First Mueller row of an ideal horizontal polarizer.
pub const IDEAL_LCTF_ROW: [f64; 4] = [0.5, 0.5, 0.0, 0.0];

/// QWP angles used for scene captures: -90°, -45°, 30°, 60°.
pub fn default_capture_angles() -> [f64; 4] {
    [-90.0f64, -45.0, 30.0, 60.0].map(f64::to_radians)
}

/// `K` angles spread uniformly over `[0, π)`, used while calibrating.
pub fn uniform_angles(k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| i as f64 * std::f64::consts::PI / k as f64)
        .collect()
}

/// The LCTF + rotating QWP imaging chain under the narrowband
/// approximation: `I = T(λ)F(λ) · M(λ, p) · Q(θ) · s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingModel {
    pub height: usize,
    pub width: usize,
    /// Sensor quantum efficiency `T(λ)`.
    pub sensor_qe: SpectralCurve,
    /// Cut-off filter transmission `F(λ)`.
    pub filter: SpectralCurve,
    /// LCTF modulation rows `M(λ, p)`, indexed `pixel · 21 + channel`.
    pub rows: Vec<[f64; 4]>,
}

impl ImagingModel {
    /// Every pixel and channel shares `row`; flat unit `T` and `F`.
    pub fn uniform(height: usize, width: usize, row: [f64; 4]) -> Self {
        ImagingModel {
            height,
            width,
            sensor_qe: SpectralCurve::constant(1.0),
            filter: SpectralCurve::constant(1.0),
            rows: vec![row; height * width * GRID_LEN],
        }
    }

    /// Ideal polarizer rows, flat curves.
    pub fn ideal(height: usize, width: usize) -> Self {
        ImagingModel::uniform(height, width, IDEAL_LCTF_ROW)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.num_pixels() * GRID_LEN {
            return Err(Error::Dimension(format!(
                "{}x{} model needs {} rows, has {}",
                self.height,
                self.width,
                self.num_pixels() * GRID_LEN,
                self.rows.len()
            )));
        }
        for (name, c) in [("sensor QE", &self.sensor_qe), ("filter", &self.filter)] {
            if c.0.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("{name} curve must lie in [0, 1]")));
            }
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LCTF rows".into()));
        }
        Ok(())
    }

    /// `c(λ) = T(λ)·F(λ)`.
    pub fn gain(&self, wavelength_nm: f64) -> Result<f64> {
        Ok(self.sensor_qe.at(wavelength_nm)? * self.filter.at(wavelength_nm)?)
    }

    fn check_pixel(&self, pixel: usize) -> Result<()> {
        if pixel >= self.num_pixels() {
            return Err(Error::InvalidInput(format!(
                "pixel {pixel} outside {}x{} model",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn row(&self, wavelength_nm: f64, pixel: usize) -> Result<[f64; 4]> {
        self.check_pixel(pixel)?;
        Ok(self.rows[pixel * GRID_LEN + grid_index(wavelength_nm)?])
    }

    pub fn set_row(&mut self, wavelength_nm: f64, pixel: usize, row: [f64; 4]) -> Result<()> {
        self.check_pixel(pixel)?;
        self.rows[pixel * GRID_LEN + grid_index(wavelength_nm)?] = row;
        Ok(())
    }

    /// Linear functional mapping `s` to the noiseless intensity at QWP
    /// angle `theta`: `c(λ) · M(λ, p) · Q(θ)`.
    pub fn measurement_row(&self, theta: f64, wavelength_nm: f64, pixel: usize) -> Result<[f64; 4]> {
        let m = self.row(wavelength_nm, pixel)?;
        let c = self.gain(wavelength_nm)?;
        let q = qwp_mueller(theta);
        Ok(std::array::from_fn(|j| c * (0..4).map(|i| m[i] * q.0[i][j]).sum::<f64>()))
    }
}

/// One simulated intensity, with additive Gaussian noise of standard
/// deviation `noise_std` drawn from `rng` (none when zero).
pub fn simulate_measurement<R: Rng + ?Sized>(
    model: &ImagingModel,
    s: &StokesVector,
    theta: f64,
    wavelength_nm: f64,
    pixel: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<f64> {
    let r = model.measurement_row(theta, wavelength_nm, pixel)?;
    let clean = (0..4).map(|i| r[i] * s[i]).sum::<f64>();
    if noise_std > 0.0 {
        let n = Normal::new(0.0, noise_std)
            .map_err(|e| Error::InvalidInput(format!("noise std {noise_std}: {e}")))?;
        Ok(clean + n.sample(rng))
    } else {
        Ok(clean)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// `n` fully polarized calibration states: unpolarized light through a
/// linear polarizer at `iπ/n`, then a QWP at `frac(i·φ⁻¹)·π`.
pub fn generate_calibration_targets(n: usize) -> Result<Vec<StokesVector>> {
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 calibration targets, got {n}"
        )));
    }
    let su = StokesVector::unpolarized(1.0);
    Ok((0..n)
        .map(|i| {
            let a = i as f64 * std::f64::consts::PI / n as f64;
            let b = (i as f64 * GOLDEN).fract() * std::f64::consts::PI;
            qwp_mueller(b) * (linear_polarizer_mueller(a) * su)
        })
        .collect())
}

/// The 21-channel grid as a vector.
pub fn calibration_grid() -> Vec<f64> {
    wavelength_grid().to_vec()
}
