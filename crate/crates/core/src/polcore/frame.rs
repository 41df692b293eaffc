use nalgebra::Vector3;

use super::{rotation_mueller, StokesVector};
use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-9;
const SHARED_AXIS_TOLERANCE: f64 = 1e-6;

/// An orthonormal, right-handed polarization frame. `z` is the propagation
/// direction of the light the frame describes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl Frame {
    /// Largest deviation from orthonormality and right-handedness.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = [
            self.x.dot(&self.y).abs(),
            self.x.dot(&self.z).abs(),
            self.y.dot(&self.z).abs(),
            (self.x.norm() - 1.0).abs(),
            (self.y.norm() - 1.0).abs(),
            (self.z.norm() - 1.0).abs(),
            (self.x.cross(&self.y) - self.z).norm(),
        ];
        r.into_iter().fold(0.0, f64::max)
    }

    /// Rotates the frame about its own `z` axis by `angle` (right-hand rule).
    pub fn rotated_about_z(&self, angle: f64) -> Frame {
        let (s, c) = angle.sin_cos();
        Frame {
            x: self.x * c + self.y * s,
            y: -self.x * s + self.y * c,
            z: self.z,
        }
    }
}

/// Deterministic orthonormal basis around a unit vector, using the branchless
/// construction of Duff et al. (2017). The returned frame has `z` equal to the
/// input.
pub fn build_frame(z: &Vector3<f64>) -> Result<Frame> {
    let n = z.norm();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(Error::InvalidInput(format!(
            "frame axis must be a unit vector, |z| = {n}"
        )));
    }
    Ok(build_frame_unchecked(z))
}

#[inline]
pub(crate) fn build_frame_unchecked(z: &Vector3<f64>) -> Frame {
    let sign = 1.0f64.copysign(z.z);
    let a = -1.0 / (sign + z.z);
    let b = z.x * z.y * a;
    Frame {
        x: Vector3::new(1.0 + sign * z.x * z.x * a, sign * b, -sign * z.x),
        y: Vector3::new(b, sign + z.y * z.y * a, -z.y),
        z: *z,
    }
}

/// Angle by which `to` is rotated relative to `from` about their shared `z`
/// axis: the direction of `to.x` measured in the `(from.x, from.y)` plane.
pub fn frame_angle(from: &Frame, to: &Frame) -> Result<f64> {
    let dz = (from.z - to.z).norm();
    if !(dz <= SHARED_AXIS_TOLERANCE) {
        return Err(Error::FrameMismatch(format!(
            "frames do not share a propagation axis (|Δz| = {dz:e})"
        )));
    }
    Ok(to.x.dot(&from.y).atan2(to.x.dot(&from.x)))
}

/// Re-expresses `s` (given in `from`) in the frame `to`.
pub fn rotate_stokes_between_frames(
    s: &StokesVector,
    from: &Frame,
    to: &Frame,
) -> Result<StokesVector> {
    let alpha = frame_angle(from, to)?;
    Ok(rotation_mueller(alpha).apply(s))
}

/// Unit vector for polar angle `theta` (from +z) and azimuth `phi` (from +x
/// toward +y).
pub fn sph2cart(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Inverse of [`sph2cart`]: returns `(theta ∈ [0, π], phi ∈ (−π, π])`.
pub fn cart2sph(v: &Vector3<f64>) -> (f64, f64) {
    let theta = v.x.hypot(v.y).atan2(v.z);
    let phi = v.y.atan2(v.x);
    (theta, phi)
}
