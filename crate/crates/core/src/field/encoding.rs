use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::Aabb;

/// Frequency-encoding settings and the normalization ranges applied to raw
/// inputs before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub k_position: usize,
    pub k_direction: usize,
    pub k_wavelength: usize,
    pub wavelength_min_nm: f64,
    pub wavelength_max_nm: f64,
    /// Positions are mapped from these bounds to `[-1, 1]`.
    pub bounds: Aabb,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            k_position: 10,
            k_direction: 4,
            k_wavelength: 1,
            wavelength_min_nm: 450.0,
            wavelength_max_nm: 650.0,
            bounds: Aabb::cube(1.0),
        }
    }
}

impl EncodingConfig {
    pub fn position_width(&self) -> usize {
        3 * encoded_width(self.k_position)
    }

    pub fn direction_width(&self) -> usize {
        3 * encoded_width(self.k_direction)
    }

    pub fn wavelength_width(&self) -> usize {
        encoded_width(self.k_wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_max_nm > self.wavelength_min_nm) {
            return Err(Error::InvalidInput(format!(
                "empty wavelength range [{}, {}]",
                self.wavelength_min_nm, self.wavelength_max_nm
            )));
        }
        self.bounds.validate()
    }

    pub fn check_wavelength(&self, wavelength_nm: f64) -> Result<()> {
        if !(wavelength_nm >= self.wavelength_min_nm && wavelength_nm <= self.wavelength_max_nm) {
            return Err(Error::WavelengthOutOfRange {
                wavelength: wavelength_nm,
                min: self.wavelength_min_nm,
                max: self.wavelength_max_nm,
            });
        }
        Ok(())
    }

    pub(crate) fn encode_position(&self, p: &Vector3<f64>, out: &mut [f64]) {
        let n = self.bounds.normalize(p);
        let w = encoded_width(self.k_position);
        for axis in 0..3 {
            encode_into(n[axis], self.k_position, &mut out[axis * w..(axis + 1) * w]);
        }
    }

    pub(crate) fn encode_direction(&self, d: &Vector3<f64>, out: &mut [f64]) {
        let w = encoded_width(self.k_direction);
        for axis in 0..3 {
            encode_into(d[axis], self.k_direction, &mut out[axis * w..(axis + 1) * w]);
        }
    }

    pub(crate) fn encode_wavelength(&self, wavelength_nm: f64) -> Vec<f64> {
        let t = (wavelength_nm - self.wavelength_min_nm)
            / (self.wavelength_max_nm - self.wavelength_min_nm);
        positional_encoding(t, self.k_wavelength)
    }
}

/// Length of `positional_encoding(x, k)`.
pub fn encoded_width(k: usize) -> usize {
    1 + 2 * (k + 1)
}

/// `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2ᵏπx), cos(2ᵏπx)]`
pub fn positional_encoding(x: f64, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_width(k)];
    encode_into(x, k, &mut out);
    out
}

#[inline]
fn encode_into(x: f64, k: usize, out: &mut [f64]) {
    out[0] = x;
    let mut freq = PI;
    for j in 0..=k {
        let (s, c) = (freq * x).sin_cos();
        out[1 + 2 * j] = s;
        out[2 + 2 * j] = c;
        freq *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn encoding_examples() {
        let e = positional_encoding(0.5, 1);
        let want = [0.5, 1.0, 0.0, 0.0, -1.0];
        for (a, b) in e.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(positional_encoding(0.0, 0), vec![0.0, 0.0, 1.0]);
        assert_eq!(positional_encoding(0.123, 10).len(), 23);
    }

    #[test]
    fn width_formula() {
        for k in 0..=12 {
            assert_eq!(positional_encoding(0.3, k).len(), 1 + 2 * (k + 1));
            assert_eq!(encoded_width(k), 1 + 2 * (k + 1));
        }
        let cfg = EncodingConfig::default();
        assert_eq!(cfg.position_width(), 69);
        assert_eq!(cfg.direction_width(), 33);
        assert_eq!(cfg.wavelength_width(), 5);
    }

    #[test]
    fn wavelength_range_is_enforced() {
        let cfg = EncodingConfig::default();
        assert!(cfg.check_wavelength(450.0).is_ok());
        assert!(cfg.check_wavelength(650.0).is_ok());
        assert!(matches!(
            cfg.check_wavelength(700.0),
            Err(Error::WavelengthOutOfRange { .. })
        ));
    }
}
