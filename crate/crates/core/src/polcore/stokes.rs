use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default slack for physical-validity checks, in normalized radiance units.
pub const DEFAULT_VALIDITY_TOLERANCE: f64 = 1e-9;

/// A Stokes vector `[s0, s1, s2, s3]` at a single wavelength.
///
/// The vector is always expressed in some polarization frame; which frame is
/// tracked by the caller (see [`Frame`](super::Frame)).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StokesVector(pub [f64; 4]);

impl StokesVector {
    pub const ZERO: StokesVector = StokesVector([0.0; 4]);

    pub const fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector([s0, s1, s2, s3])
    }

    /// Unpolarized light of total radiance `s0`.
    pub const fn unpolarized(s0: f64) -> Self {
        StokesVector([s0, 0.0, 0.0, 0.0])
    }

    pub fn s0(&self) -> f64 {
        self.0[0]
    }

    pub fn s1(&self) -> f64 {
        self.0[1]
    }

    pub fn s2(&self) -> f64 {
        self.0[2]
    }

    pub fn s3(&self) -> f64 {
        self.0[3]
    }

    /// Radiance of the polarized part, `sqrt(s1² + s2² + s3²)`.
    pub fn polarized_intensity(&self) -> f64 {
        (self.0[1] * self.0[1] + self.0[2] * self.0[2] + self.0[3] * self.0[3]).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `s0² + tol ≥ s1² + s2² + s3²` and `s0 ≥ -tol`.
    pub fn is_valid(&self, tolerance: f64) -> bool {
        stokes_is_valid(self, tolerance)
    }

    pub fn max_abs_diff(&self, other: &StokesVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for StokesVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for StokesVector {
    type Output = StokesVector;

    fn add(self, rhs: StokesVector) -> StokesVector {
        StokesVector(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl AddAssign for StokesVector {
    fn add_assign(&mut self, rhs: StokesVector) {
        for i in 0..4 {
            self.0[i] += rhs.0[i];
        }
    }
}

impl Sub for StokesVector {
    type Output = StokesVector;

    fn sub(self, rhs: StokesVector) -> StokesVector {
        StokesVector(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Mul<f64> for StokesVector {
    type Output = StokesVector;

    fn mul(self, k: f64) -> StokesVector {
        StokesVector(self.0.map(|v| v * k))
    }
}

impl From<[f64; 4]> for StokesVector {
    fn from(v: [f64; 4]) -> Self {
        StokesVector(v)
    }
}

/// Poincaré-sphere parameterization: total radiance, degree of polarization,
/// ellipticity angle and azimuth angle (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoincareParams {
    pub s0: f64,
    pub dop: f64,
    pub chi: f64,
    pub psi: f64,
}

impl PoincareParams {
    pub fn new(s0: f64, dop: f64, chi: f64, psi: f64) -> Self {
        PoincareParams { s0, dop, chi, psi }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "total radiance s0 = {} must be nonnegative",
                self.s0
            )));
        }
        if !(0.0..=1.0).contains(&self.dop) {
            return Err(Error::InvalidInput(format!(
                "degree of polarization {} outside [0, 1]",
                self.dop
            )));
        }
        Ok(())
    }
}

/// Visualization quantities derived from a Stokes vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationSummary {
    /// Degree of polarization in `[0, 1]` (may exceed 1 for noisy measurements).
    pub dop: f64,
    /// Angle of linear polarization in `[0, π)`.
    pub aolp: f64,
    /// Type of polarization: circular fraction of the polarized part, `[0, 1]`.
    pub top: f64,
    /// Chirality of polarization: sign of `s3` (`0` when `s3 == 0`).
    pub cop: i8,
}

pub fn stokes_is_valid(s: &StokesVector, tolerance: f64) -> bool {
    let p2 = s.0[1] * s.0[1] + s.0[2] * s.0[2] + s.0[3] * s.0[3];
    s.0[0] * s.0[0] + tolerance >= p2 && s.0[0] >= -tolerance
}

/// Builds a Stokes vector from Poincaré parameters. Any `dop ∈ [0,1]`,
/// `s0 ≥ 0` and arbitrary angles produce a physically valid vector.
pub fn stokes_from_poincare(p: &PoincareParams) -> Result<StokesVector> {
    p.validate()?;
    Ok(stokes_from_poincare_unchecked(p.s0, p.dop, p.chi, p.psi))
}

#[inline]
pub(crate) fn stokes_from_poincare_unchecked(s0: f64, dop: f64, chi: f64, psi: f64) -> StokesVector {
    let (s2chi, c2chi) = (2.0 * chi).sin_cos();
    let (s2psi, c2psi) = (2.0 * psi).sin_cos();
    let p = s0 * dop;
    StokesVector([s0, p * c2chi * c2psi, p * c2chi * s2psi, p * s2chi])
}

/// Inverse of [`stokes_from_poincare`]. For unpolarized input both angles are
/// reported as zero.
pub fn poincare_from_stokes(s: &StokesVector) -> Result<PoincareParams> {
    let s0 = s.s0();
    if !(s0 > 0.0) {
        return Err(Error::Degenerate(format!(
            "Poincaré parameters need s0 > 0, got {s0}"
        )));
    }
    let p = s.polarized_intensity();
    if p == 0.0 {
        return Ok(PoincareParams::new(s0, 0.0, 0.0, 0.0));
    }
    let dop = (p / s0).min(1.0);
    let chi = 0.5 * (s.s3() / p).clamp(-1.0, 1.0).asin();
    let psi = 0.5 * s.s2().atan2(s.s1());
    Ok(PoincareParams::new(s0, dop, chi, psi))
}

/// Maps an angle into `[0, π)`.
pub fn wrap_half_turn(angle: f64) -> f64 {
    let a = angle.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if a >= PI {
        0.0
    } else {
        a
    }
}

pub fn summarize_polarization(s: &StokesVector) -> Result<PolarizationSummary> {
    let s0 = s.s0();
    if !(s0 > 0.0) {
        return Err(Error::Degenerate(format!(
            "polarization summary needs s0 > 0, got {s0}"
        )));
    }
    let p = s.polarized_intensity();
    let top = if p > 0.0 { s.s3().abs() / p } else { 0.0 };
    let cop = if s.s3() > 0.0 {
        1
    } else if s.s3() < 0.0 {
        -1
    } else {
        0
    };
    Ok(PolarizationSummary {
        dop: p / s0,
        aolp: wrap_half_turn(0.5 * s.s2().atan2(s.s1())),
        top,
        cop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_stokes(a: StokesVector, b: [f64; 4], tol: f64) {
        for i in 0..4 {
            assert_abs_diff_eq!(a.0[i], b[i], epsilon = tol);
        }
    }

    #[test]
    fn validity_examples() {
        assert!(stokes_is_valid(&StokesVector::new(1.0, 0.0, 0.0, 0.0), 0.0));
        assert!(!stokes_is_valid(&StokesVector::new(1.0, 0.8, 0.6, 0.1), 0.0));
        assert!(stokes_is_valid(&StokesVector::new(1.0, 1.0, 0.0, 0.0), 0.0));
        assert!(!stokes_is_valid(&StokesVector::new(-0.1, 0.0, 0.0, 0.0), 1e-9));
    }

    #[test]
    fn poincare_examples() {
        let s = stokes_from_poincare(&PoincareParams::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_stokes(s, [1.0, 1.0, 0.0, 0.0], 1e-15);
        let s = stokes_from_poincare(&PoincareParams::new(1.0, 1.0, PI / 4.0, 0.0)).unwrap();
        assert_stokes(s, [1.0, 0.0, 0.0, 1.0], 1e-15);
        let s = stokes_from_poincare(&PoincareParams::new(2.0, 0.5, 0.0, PI / 4.0)).unwrap();
        assert_stokes(s, [2.0, 0.0, 1.0, 0.0], 1e-15);
    }

    #[test]
    fn poincare_rejects_bad_params() {
        assert!(stokes_from_poincare(&PoincareParams::new(1.0, 1.5, 0.0, 0.0)).is_err());
        assert!(stokes_from_poincare(&PoincareParams::new(1.0, -0.1, 0.0, 0.0)).is_err());
        assert!(stokes_from_poincare(&PoincareParams::new(-1.0, 0.5, 0.0, 0.0)).is_err());
    }

    #[test]
    fn inverse_poincare_examples() {
        let p = poincare_from_stokes(&StokesVector::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(p, PoincareParams::new(1.0, 1.0, 0.0, 0.0));
        let p = poincare_from_stokes(&StokesVector::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(p, PoincareParams::new(1.0, 0.0, 0.0, 0.0));

        let s = StokesVector::new(1.0, 0.3, 0.4, 0.0);
        let p = poincare_from_stokes(&s).unwrap();
        assert_abs_diff_eq!(p.dop, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.psi, 0.5 * 0.4f64.atan2(0.3), epsilon = 1e-15);
        assert_abs_diff_eq!(p.chi, 0.0, epsilon = 1e-15);
        assert_stokes(stokes_from_poincare(&p).unwrap(), s.0, 1e-12);

        assert!(matches!(
            poincare_from_stokes(&StokesVector::new(0.0, 0.0, 0.0, 0.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn summary_examples() {
        let s = summarize_polarization(&StokesVector::new(1.0, 0.6, 0.8, 0.0)).unwrap();
        assert_abs_diff_eq!(s.dop, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.aolp, 0.5 * 0.8f64.atan2(0.6), epsilon = 1e-15);
        assert_abs_diff_eq!(s.aolp, 0.4636, epsilon = 1e-4);
        assert_eq!(s.top, 0.0);
        assert_eq!(s.cop, 0);

        let s = summarize_polarization(&StokesVector::new(1.0, 0.0, 0.0, -0.5)).unwrap();
        assert_abs_diff_eq!(s.dop, 0.5, epsilon = 1e-15);
        assert_eq!(s.top, 1.0);
        assert_eq!(s.cop, -1);

        let s = summarize_polarization(&StokesVector::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!((s.dop, s.top, s.cop), (0.0, 0.0, 0));

        assert!(summarize_polarization(&StokesVector::new(0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn aolp_is_in_half_open_range() {
        let s = summarize_polarization(&StokesVector::new(1.0, -1.0, -1e-18, 0.0)).unwrap();
        assert!(s.aolp >= 0.0 && s.aolp < PI);
    }

    pub(crate) fn valid_stokes() -> impl Strategy<Value = StokesVector> {
        (0.0..10.0f64, 0.0..=1.0f64, -PI..PI, -PI..PI).prop_map(|(s0, dop, chi, psi)| {
            stokes_from_poincare_unchecked(s0, dop, chi, psi)
        })
    }

    proptest! {
        #[test]
        fn validity_cone_is_closed(
            vs in prop::collection::vec(valid_stokes(), 1..12),
            ws in prop::collection::vec(0.0..5.0f64, 12),
        ) {
            let mut acc = StokesVector::ZERO;
            for (v, w) in vs.iter().zip(ws.iter()) {
                acc += *v * *w;
            }
            prop_assert!(acc.is_valid(DEFAULT_VALIDITY_TOLERANCE * 1e3));
        }

        #[test]
        fn poincare_round_trip(
            s0 in 0.01..10.0f64, dop in 0.01..=1.0f64, chi in -PI..PI, psi in -PI..PI,
        ) {
            let s = stokes_from_poincare_unchecked(s0, dop, chi, psi);
            prop_assert!(s.is_valid(1e-12));
            let back = stokes_from_poincare(&poincare_from_stokes(&s).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&s) <= 1e-9);
        }
    }
}
