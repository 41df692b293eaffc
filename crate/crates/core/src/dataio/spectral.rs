//! Spectral curves on the 450-650 nm grid, spectrum-to-RGB conversion and
//! polynomial spectral fitting.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of channels of the 10 nm grid.
pub const GRID_LEN: usize = 21;

/// `{450, 460, ..., 650}` nm.
pub fn wavelength_grid() -> [f64; GRID_LEN] {
    std::array::from_fn(|i| 450.0 + 10.0 * i as f64)
}

/// Position of `wavelength_nm` on the grid.
pub fn grid_index(wavelength_nm: f64) -> Result<usize> {
    let k = (wavelength_nm - 450.0) / 10.0;
    let i = k.round();
    if (k - i).abs() > 1e-6 || !(0.0..GRID_LEN as f64).contains(&i) {
        return Err(Error::OffGrid(wavelength_nm));
    }
    Ok(i as usize)
}

/// Values on the 21-channel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralCurve(pub [f64; GRID_LEN]);

impl SpectralCurve {
    pub fn constant(v: f64) -> Self {
        SpectralCurve([v; GRID_LEN])
    }

    pub fn from_fn(f: impl Fn(f64) -> f64) -> Self {
        let g = wavelength_grid();
        SpectralCurve(std::array::from_fn(|i| f(g[i])))
    }

    pub fn at(&self, wavelength_nm: f64) -> Result<f64> {
        Ok(self.0[grid_index(wavelength_nm)?])
    }

    pub fn scaled(&self, k: f64) -> Self {
        SpectralCurve(self.0.map(|v| v * k))
    }
}

const CMF_CSV: &str = include_str!("../../data/cie1931_2deg_450_650.csv");

/// CIE 1931 2° colour-matching functions on the grid, as `[x̄, ȳ, z̄]` rows.
pub fn color_matching_functions() -> &'static [[f64; 3]; GRID_LEN] {
    static CMF: OnceLock<[[f64; 3]; GRID_LEN]> = OnceLock::new();
    CMF.get_or_init(|| {
        let mut out = [[0.0; 3]; GRID_LEN];
        let rows = CMF_CSV
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("wavelength"));
        for (i, line) in rows.enumerate() {
            let v: Vec<f64> = line.split(',').map(|t| t.trim().parse().unwrap()).collect();
            assert_eq!(v[0], 450.0 + 10.0 * i as f64, "CMF table out of order");
            out[i] = [v[1], v[2], v[3]];
        }
        out
    })
}

/// Linear sRGB (D65) from CIE XYZ.
const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

fn xyz(curve: &SpectralCurve) -> Vector3<f64> {
    let cmf = color_matching_functions();
    let mut acc = Vector3::zeros();
    // trapezoidal rule on the uniform grid
    for i in 0..GRID_LEN {
        let w = if i == 0 || i == GRID_LEN - 1 { 5.0 } else { 10.0 };
        for c in 0..3 {
            acc[c] += w * curve.0[i] * cmf[i][c];
        }
    }
    acc
}

fn white_balanced_matrix() -> &'static Matrix3<f64> {
    static M: OnceLock<Matrix3<f64>> = OnceLock::new();
    M.get_or_init(|| {
        let m = Matrix3::from_fn(|r, c| XYZ_TO_SRGB[r][c]);
        let white = m * xyz(&SpectralCurve::constant(1.0));
        Matrix3::from_diagonal(&white.map(|v| 1.0 / v)) * m
    })
}

/// sRGB transfer function.
pub fn srgb_gamma(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// An s0 spectrum as colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rgb {
    /// White-balanced linear RGB before clipping; a flat unit spectrum maps
    /// to `(1, 1, 1)`.
    pub linear: [f64; 3],
    /// Clipped to `[0, 1]` and gamma encoded.
    pub encoded: [f64; 3],
}

pub fn spectrum_to_rgb(curve: &SpectralCurve) -> Rgb {
    let lin = white_balanced_matrix() * xyz(curve);
    let linear = [lin[0], lin[1], lin[2]];
    Rgb {
        linear,
        encoded: linear.map(|v| srgb_gamma(v.clamp(0.0, 1.0))),
    }
}

/// Degree-4 polynomial in `x = (λ - 550) / 100`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPolynomial {
    /// `c₀ + c₁x + … + c₄x⁴`
    pub coeffs: [f64; 5],
}

impl SpectralPolynomial {
    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        let x = (wavelength_nm - 550.0) / 100.0;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_grid(&self) -> SpectralCurve {
        SpectralCurve::from_fn(|l| self.eval(l))
    }
}

/// Least-squares fourth-order fit; interpolating when given exactly five
/// distinct wavelengths.
pub fn fit_spectral_polynomial(wavelengths: &[f64], values: &[f64]) -> Result<SpectralPolynomial> {
    if wavelengths.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} wavelengths but {} values",
            wavelengths.len(),
            values.len()
        )));
    }
    let mut distinct = wavelengths.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "a fourth-order fit needs at least 5 distinct wavelengths, got {}",
            distinct.len()
        )));
    }
    let n = wavelengths.len();
    let a = DMatrix::from_fn(n, 5, |r, c| ((wavelengths[r] - 550.0) / 100.0).powi(c as i32));
    let b = DVector::from_column_slice(values);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(SpectralPolynomial {
        coeffs: std::array::from_fn(|i| sol[i]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FIVE: [f64; 5] = [450.0, 500.0, 550.0, 600.0, 650.0];

    #[test]
    fn grid_lookup() {
        assert_eq!(wavelength_grid()[20], 650.0);
        assert_eq!(grid_index(630.0).unwrap(), 18);
        assert!(matches!(grid_index(455.0), Err(Error::OffGrid(_))));
        assert!(grid_index(660.0).is_err());
    }

    #[test]
    fn cmf_table_loads() {
        let cmf = color_matching_functions();
        assert_eq!(cmf[10], [0.43345, 0.99495, 0.00875]);
    }

    #[test]
    fn zero_and_flat_spectra() {
        let z = spectrum_to_rgb(&SpectralCurve::constant(0.0));
        assert_eq!(z.encoded, [0.0; 3]);
        let w = spectrum_to_rgb(&SpectralCurve::constant(0.5));
        for c in 0..3 {
            assert!((w.linear[c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rgb_is_linear_before_gamma() {
        let c = SpectralCurve::from_fn(|l| ((l - 450.0) / 200.0).powi(2));
        let a = spectrum_to_rgb(&c).linear;
        let b = spectrum_to_rgb(&c.scaled(3.0)).linear;
        for i in 0..3 {
            assert!((3.0 * a[i] - b[i]).abs() < 1e-12);
        }
        // a red-heavy spectrum should come out red
        assert!(a[0] > a[2]);
    }

    #[test]
    fn quadratic_is_recovered() {
        let f = |l: f64| {
            let x = (l - 550.0) / 100.0;
            0.3 - 0.2 * x + 0.7 * x * x
        };
        let p = fit_spectral_polynomial(&FIVE, &FIVE.map(f)).unwrap();
        assert!((p.coeffs[0] - 0.3).abs() < 1e-9);
        assert!((p.coeffs[1] + 0.2).abs() < 1e-9);
        assert!((p.coeffs[2] - 0.7).abs() < 1e-9);
        assert!(p.coeffs[3].abs() < 1e-9 && p.coeffs[4].abs() < 1e-9);
        let grid = p.eval_grid();
        assert!((grid.at(630.0).unwrap() - f(630.0)).abs() < 1e-9);
    }

    #[test]
    fn constant_samples_give_constant_polynomial() {
        let p = fit_spectral_polynomial(&FIVE, &[0.4; 5]).unwrap();
        assert!(p.eval_grid().0.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn five_points_are_interpolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let v: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let p = fit_spectral_polynomial(&FIVE, &v).unwrap();
            for (l, y) in FIVE.iter().zip(v) {
                assert!((p.eval(*l) - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn too_few_points() {
        assert!(fit_spectral_polynomial(&FIVE[..4], &[0.0; 4]).is_err());
        assert!(fit_spectral_polynomial(&[450.0; 5], &[0.0; 5]).is_err());
    }
}
