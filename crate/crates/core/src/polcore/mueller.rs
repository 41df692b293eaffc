use std::ops::Mul;

use super::StokesVector;

/// A 4×4 Mueller matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuellerMatrix(pub [[f64; 4]; 4]);

impl MuellerMatrix {
    pub const IDENTITY: MuellerMatrix = MuellerMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        StokesVector(std::array::from_fn(|r| {
            (0..4).map(|c| self.0[r][c] * s.0[c]).sum()
        }))
    }

    pub fn row(&self, r: usize) -> [f64; 4] {
        self.0[r]
    }

    pub fn max_abs_diff(&self, other: &MuellerMatrix) -> f64 {
        let mut m = 0.0f64;
        for r in 0..4 {
            for c in 0..4 {
                m = m.max((self.0[r][c] - other.0[r][c]).abs());
            }
        }
        m
    }
}

impl Mul for MuellerMatrix {
    type Output = MuellerMatrix;

    fn mul(self, rhs: MuellerMatrix) -> MuellerMatrix {
        MuellerMatrix(std::array::from_fn(|r| {
            std::array::from_fn(|c| (0..4).map(|k| self.0[r][k] * rhs.0[k][c]).sum())
        }))
    }
}

impl Mul<StokesVector> for MuellerMatrix {
    type Output = StokesVector;

    fn mul(self, rhs: StokesVector) -> StokesVector {
        self.apply(&rhs)
    }
}

/// Ideal achromatic quarter-wave retarder with its fast axis at `theta`.
pub fn qwp_mueller(theta: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * theta).sin_cos();
    MuellerMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c * c, s * c, -s],
        [0.0, s * c, s * s, c],
        [0.0, s, -c, 0.0],
    ])
}

/// Ideal linear polarizer with its transmission axis at `theta`.
pub fn linear_polarizer_mueller(theta: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * theta).sin_cos();
    MuellerMatrix([
        [0.5, 0.5 * c, 0.5 * s, 0.0],
        [0.5 * c, 0.5 * c * c, 0.5 * c * s, 0.0],
        [0.5 * s, 0.5 * c * s, 0.5 * s * s, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
}

/// Change of polarization frame by a rotation of `alpha` about the
/// propagation axis: `s1' = cos2α·s1 + sin2α·s2`, `s2' = −sin2α·s1 + cos2α·s2`.
pub fn rotation_mueller(alpha: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * alpha).sin_cos();
    MuellerMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, s, 0.0],
        [0.0, -s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polcore::{stokes_from_poincare_unchecked, summarize_polarization};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: StokesVector, b: [f64; 4]) {
        assert!(a.max_abs_diff(&StokesVector(b)) < 1e-15, "{a:?} vs {b:?}");
    }

    #[test]
    fn qwp_examples() {
        close(qwp_mueller(0.0) * StokesVector::new(1.0, 0.0, 1.0, 0.0), [1.0, 0.0, 0.0, -1.0]);
        close(qwp_mueller(PI / 4.0) * StokesVector::new(1.0, 1.0, 0.0, 0.0), [1.0, 0.0, 0.0, 1.0]);
        let m = qwp_mueller(0.37);
        assert_eq!(m.0[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!([m.0[1][0], m.0[2][0], m.0[3][0]], [0.0; 3]);
    }

    #[test]
    fn polarizer_examples() {
        close(
            linear_polarizer_mueller(0.0) * StokesVector::new(1.0, 0.0, 0.0, 0.0),
            [0.5, 0.5, 0.0, 0.0],
        );
        close(
            linear_polarizer_mueller(0.0) * StokesVector::new(1.0, -1.0, 0.0, 0.0),
            [0.0, 0.0, 0.0, 0.0],
        );
        close(
            linear_polarizer_mueller(PI / 4.0) * StokesVector::new(1.0, 1.0, 0.0, 0.0),
            [0.5, 0.0, 0.5, 0.0],
        );
    }

    #[test]
    fn rotation_examples() {
        close(rotation_mueller(0.83) * StokesVector::unpolarized(1.0), [1.0, 0.0, 0.0, 0.0]);
        close(
            rotation_mueller(PI / 4.0) * StokesVector::new(1.0, 1.0, 0.0, 0.0),
            [1.0, 0.0, -1.0, 0.0],
        );
    }

    proptest! {
        #[test]
        fn qwp_preserves_dop_at_eighth_turn(
            s0 in 0.1..5.0f64, dop in 0.0..=1.0f64, chi in -PI..PI, psi in -PI..PI,
        ) {
            let s = stokes_from_poincare_unchecked(s0, dop, chi, psi);
            let out = qwp_mueller(PI / 8.0) * s;
            let a = summarize_polarization(&s).unwrap().dop;
            let b = summarize_polarization(&out).unwrap().dop;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn retarder_and_rotation_preserve_norms(
            s in prop::array::uniform4(-3.0..3.0f64), theta in -PI..PI,
        ) {
            let s = StokesVector(s);
            for m in [qwp_mueller(theta), rotation_mueller(theta)] {
                let out = m * s;
                prop_assert!((out.s0() - s.s0()).abs() < 1e-14);
                prop_assert!((out.polarized_intensity() - s.polarized_intensity()).abs() < 1e-12);
            }
        }

        #[test]
        fn rotations_compose(a in -PI..PI, b in -PI..PI) {
            let ab = rotation_mueller(a) * rotation_mueller(b);
            prop_assert!(ab.max_abs_diff(&rotation_mueller(a + b)) < 1e-12);
            let id = rotation_mueller(a) * rotation_mueller(-a);
            prop_assert!(id.max_abs_diff(&MuellerMatrix::IDENTITY) < 1e-12);
        }

        #[test]
        fn polarizer_output_is_fully_polarized(
            s0 in 0.1..5.0f64, dop in 0.0..=1.0f64, chi in -PI..PI, psi in -PI..PI, theta in -PI..PI,
        ) {
            let s = stokes_from_poincare_unchecked(s0, dop, chi, psi);
            let out = linear_polarizer_mueller(theta) * s;
            prop_assert!(out.is_valid(1e-12));
            if out.s0() > 1e-9 {
                let dop = out.polarized_intensity() / out.s0();
                prop_assert!((dop - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn polarizer_halves_unpolarized_light_at_any_angle() {
        for k in 0..16 {
            let out = linear_polarizer_mueller(k as f64 * 0.3) * StokesVector::unpolarized(2.0);
            assert_abs_diff_eq!(out.s0(), 1.0, epsilon = 1e-15);
        }
    }
}
