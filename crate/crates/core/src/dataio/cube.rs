use crate::error::{Error, Result};
use crate::polcore::StokesVector;

/// A Stokes image cube `[H × W × Λ × 4]`, stored row, column, wavelength,
/// element (element fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct StokesCube {
    pub height: usize,
    pub width: usize,
    pub wavelengths: Vec<f64>,
    pub data: Vec<f64>,
}

impl StokesCube {
    pub fn zeros(height: usize, width: usize, wavelengths: Vec<f64>) -> Self {
        let n = height * width * wavelengths.len() * 4;
        StokesCube {
            height,
            width,
            wavelengths,
            data: vec![0.0; n],
        }
    }

    pub fn from_data(
        height: usize,
        width: usize,
        wavelengths: Vec<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let need = height * width * wavelengths.len() * 4;
        if data.len() != need {
            return Err(Error::Dimension(format!(
                "cube {height}x{width}x{}x4 needs {need} values, got {}",
                wavelengths.len(),
                data.len()
            )));
        }
        Ok(StokesCube {
            height,
            width,
            wavelengths,
            data,
        })
    }

    pub fn num_wavelengths(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &StokesCube) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.wavelengths == other.wavelengths
    }

    pub fn index(&self, row: usize, col: usize, l: usize) -> usize {
        ((row * self.width + col) * self.wavelengths.len() + l) * 4
    }

    pub fn get(&self, row: usize, col: usize, l: usize) -> StokesVector {
        let i = self.index(row, col, l);
        StokesVector(self.data[i..i + 4].try_into().unwrap())
    }

    pub fn set(&mut self, row: usize, col: usize, l: usize, s: StokesVector) {
        let i = self.index(row, col, l);
        self.data[i..i + 4].copy_from_slice(&s.0);
    }

    /// Stokes vector by flat pixel index `row·W + col`.
    pub fn pixel(&self, pixel: usize, l: usize) -> StokesVector {
        let i = (pixel * self.wavelengths.len() + l) * 4;
        StokesVector(self.data[i..i + 4].try_into().unwrap())
    }

    /// All wavelengths of one pixel, `Λ × 4` values.
    pub fn pixel_slice(&self, pixel: usize) -> &[f64] {
        let n = self.wavelengths.len() * 4;
        &self.data[pixel * n..(pixel + 1) * n]
    }

    pub fn pixel_slice_mut(&mut self, pixel: usize) -> &mut [f64] {
        let n = self.wavelengths.len() * 4;
        &mut self.data[pixel * n..(pixel + 1) * n]
    }

    /// One element at one wavelength as a row-major `H × W` image.
    pub fn channel(&self, l: usize, element: usize) -> Vec<f64> {
        (0..self.num_pixels())
            .map(|p| self.data[(p * self.wavelengths.len() + l) * 4 + element])
            .collect()
    }

    pub fn wavelength_index(&self, wavelength_nm: f64) -> Option<usize> {
        self.wavelengths
            .iter()
            .position(|w| (w - wavelength_nm).abs() < 1e-9)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of pixel-wavelength entries that fail the validity check.
    pub fn count_invalid(&self, tolerance: f64) -> usize {
        self.data
            .chunks_exact(4)
            .filter(|c| !StokesVector([c[0], c[1], c[2], c[3]]).is_valid(tolerance))
            .count()
    }

    pub fn max_abs_diff(&self, other: &StokesCube) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
