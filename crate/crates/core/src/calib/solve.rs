use log::warn;
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;

use super::{ImagingModel, MeasurementSet};
use crate::dataio::{StokesCube, GRID_LEN};
use crate::error::{Error, Result};
use crate::polcore::{qwp_mueller, StokesVector, DEFAULT_VALIDITY_TOLERANCE};

/// Normal-matrix condition numbers above this switch to the SVD solver.
pub const CONDITION_WARN: f64 = 1e10;

/// Relative singular-value cutoff for numerical rank.
const RANK_TOL: f64 = 1e-12;

/// A four-unknown least-squares solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqSolution {
    pub x: [f64; 4],
    /// `‖A x - b‖₂`
    pub residual_norm: f64,
    /// Condition number of `AᵀA`.
    pub condition: f64,
}

fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn numerical_rank(sv: &[f64]) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|s| **s > RANK_TOL * top && **s > 0.0).count()
}

/// Solves `min ‖A x - b‖` for `A` with four columns through the normal
/// equations and a Cholesky factorization, falling back to an SVD solve when
/// `AᵀA` is badly conditioned.
pub fn solve_least_squares4(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<LsqSolution> {
    if a.ncols() != 4 || a.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "{context}: system is {}x{} with {} observations",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.nrows() < 4 {
        return Err(Error::RankDeficient {
            context: context.into(),
            rank: a.nrows(),
            needed: 4,
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.into()));
    }
    let sv = singular_values(a);
    let rank = numerical_rank(&sv);
    if rank < 4 {
        return Err(Error::RankDeficient {
            context: context.into(),
            rank,
            needed: 4,
        });
    }
    let condition = (sv[0] / sv[3]).powi(2);
    let ata: Matrix4<f64> = (a.transpose() * a).fixed_view::<4, 4>(0, 0).into_owned();
    let atb: Vector4<f64> = (a.transpose() * b).fixed_view::<4, 1>(0, 0).into_owned();
    let x = match ata.cholesky().filter(|_| condition <= CONDITION_WARN) {
        Some(ch) => ch.solve(&atb),
        None => {
            warn!("{context}: normal matrix condition {condition:.3e}, using SVD");
            let svd = a.clone().svd(true, true);
            let x = svd
                .solve(b, RANK_TOL * sv[0])
                .map_err(|e| Error::Degenerate(format!("{context}: {e}")))?;
            Vector4::new(x[0], x[1], x[2], x[3])
        }
    };
    let xd = DVector::from_column_slice(x.as_slice());
    let residual_norm = (a * xd - b).norm();
    Ok(LsqSolution {
        x: [x[0], x[1], x[2], x[3]],
        residual_norm,
        condition,
    })
}

/// Calibration captures of one pixel at one wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    /// Known input Stokes vector.
    pub stokes: StokesVector,
    /// One intensity per QWP angle.
    pub intensities: Vec<f64>,
    pub pixel: usize,
    pub wavelength_nm: f64,
}

/// Fits the LCTF row `M(λ, p)` from samples taken at `angles`, given the
/// gain `c(λ) = T(λ)F(λ)` and an ideal QWP.
pub fn solve_lctf_row(samples: &[CalibrationSample], angles: &[f64], gain: f64) -> Result<LsqSolution> {
    let context = match samples.first() {
        Some(s) => format!("LCTF row, pixel {} at {} nm", s.pixel, s.wavelength_nm),
        None => "LCTF row".to_string(),
    };
    let k = angles.len();
    let q: Vec<_> = angles.iter().map(|t| qwp_mueller(*t)).collect();
    let mut a = DMatrix::zeros(samples.len() * k, 4);
    let mut b = DVector::zeros(samples.len() * k);
    for (i, s) in samples.iter().enumerate() {
        if s.intensities.len() != k {
            return Err(Error::Shape(format!(
                "{context}: sample {i} has {} intensities for {k} angles",
                s.intensities.len()
            )));
        }
        for (j, qj) in q.iter().enumerate() {
            let v = *qj * s.stokes;
            for c in 0..4 {
                a[(i * k + j, c)] = gain * v[c];
            }
            b[i * k + j] = s.intensities[j];
        }
    }
    solve_least_squares4(&a, &b, &context)
}

fn measurement_matrix(model: &ImagingModel, angles: &[f64], wavelength_nm: f64, pixel: usize) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(angles.len(), 4);
    for (k, t) in angles.iter().enumerate() {
        let r = model.measurement_row(*t, wavelength_nm, pixel)?;
        for c in 0..4 {
            a[(k, c)] = r[c];
        }
    }
    Ok(a)
}

/// Stokes vector recovered from one pixel's intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub stokes: StokesVector,
    pub residual_norm: f64,
    pub condition: f64,
    /// Whether the estimate is physically valid; noise may break this and
    /// it is not enforced.
    pub valid: bool,
}

fn angle_list(angles: &[f64]) -> String {
    let deg: Vec<String> = angles.iter().map(|a| format!("{:.2}°", a.to_degrees())).collect();
    deg.join(", ")
}

pub fn reconstruct_stokes(
    intensities: &[f64],
    angles: &[f64],
    model: &ImagingModel,
    wavelength_nm: f64,
    pixel: usize,
) -> Result<Reconstruction> {
    if intensities.len() != angles.len() {
        return Err(Error::Shape(format!(
            "{} intensities for {} angles",
            intensities.len(),
            angles.len()
        )));
    }
    let a = measurement_matrix(model, angles, wavelength_nm, pixel)?;
    let b = DVector::from_column_slice(intensities);
    let context = format!("Stokes reconstruction at {wavelength_nm} nm, angles [{}]", angle_list(angles));
    let sol = solve_least_squares4(&a, &b, &context).map_err(|e| match e {
        Error::RankDeficient { .. } => Error::IllConditioned {
            context: context.clone(),
            condition: f64::INFINITY,
        },
        e => e,
    })?;
    let stokes = StokesVector(sol.x);
    Ok(Reconstruction {
        stokes,
        residual_norm: sol.residual_norm,
        condition: sol.condition,
        valid: stokes.is_valid(DEFAULT_VALIDITY_TOLERANCE),
    })
}

/// Condition number of the stacked `K × 4` measurement matrix, or infinity
/// when it is rank deficient.
pub fn angle_set_conditioning(angles: &[f64], model: &ImagingModel, wavelength_nm: f64, pixel: usize) -> Result<f64> {
    let a = measurement_matrix(model, angles, wavelength_nm, pixel)?;
    let sv = singular_values(&a);
    if sv.len() < 4 || numerical_rank(&sv) < 4 {
        return Ok(f64::INFINITY);
    }
    Ok(sv[0] / sv[3])
}

/// Smallest singular value of the measurement matrix.
pub fn angle_set_min_singular_value(angles: &[f64], model: &ImagingModel, wavelength_nm: f64, pixel: usize) -> Result<f64> {
    let a = measurement_matrix(model, angles, wavelength_nm, pixel)?;
    let sv = singular_values(&a);
    Ok(if sv.len() < 4 { 0.0 } else { sv[3] })
}

/// A pixel/wavelength solve that failed; the rest of the image proceeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFailure {
    pub row: usize,
    pub col: usize,
    pub wavelength_nm: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub model: ImagingModel,
    /// Residual norm per `(pixel, wavelength)` of the capture, `pixel·Λ + l`;
    /// NaN for failures.
    pub residuals: Vec<f64>,
    pub failures: Vec<PixelFailure>,
}

/// Fits every pixel's LCTF rows from a calibration capture. `base` supplies
/// `T`, `F` and the image size; rows of channels not in the capture keep
/// their value from `base`, rows of failed solves are zeroed.
pub fn calibrate(base: &ImagingModel, capture: &MeasurementSet) -> Result<CalibrationResult> {
    capture.validate()?;
    let targets = capture
        .targets
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("calibration capture has no target Stokes vectors".into()))?;
    if capture.height != base.height || capture.width != base.width {
        return Err(Error::Dimension(format!(
            "capture is {}x{}, model is {}x{}",
            capture.height, capture.width, base.height, base.width
        )));
    }
    let nl = capture.wavelengths.len();
    let mut gains = Vec::with_capacity(nl);
    for &l in &capture.wavelengths {
        gains.push(base.gain(l)?);
    }
    let solved: Vec<(usize, usize, Result<LsqSolution>)> = (0..capture.num_pixels() * nl)
        .into_par_iter()
        .map(|idx| {
            let (p, l) = (idx / nl, idx % nl);
            let samples: Vec<_> = targets
                .iter()
                .enumerate()
                .map(|(i, s)| CalibrationSample {
                    stokes: *s,
                    intensities: capture.intensities(i, l, p),
                    pixel: p,
                    wavelength_nm: capture.wavelengths[l],
                })
                .collect();
            (p, l, solve_lctf_row(&samples, &capture.angles, gains[l]))
        })
        .collect();

    let mut model = base.clone();
    let mut residuals = Vec::with_capacity(solved.len());
    let mut failures = Vec::new();
    for (p, l, r) in solved {
        let lambda = capture.wavelengths[l];
        let ch = crate::dataio::grid_index(lambda)?;
        match r {
            Ok(sol) => {
                model.rows[p * GRID_LEN + ch] = sol.x;
                residuals.push(sol.residual_norm);
            }
            Err(e) => {
                model.rows[p * GRID_LEN + ch] = [0.0; 4];
                residuals.push(f64::NAN);
                failures.push(PixelFailure {
                    row: p / capture.width,
                    col: p % capture.width,
                    wavelength_nm: lambda,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(CalibrationResult {
        model,
        residuals,
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub cube: StokesCube,
    /// Residual norm per `pixel·Λ + l`; NaN for failures.
    pub residuals: Vec<f64>,
    /// Entries whose estimate is not physically valid.
    pub invalid: usize,
    pub failures: Vec<PixelFailure>,
}

/// Per-pixel Stokes reconstruction of a scene capture (one sample per
/// pixel). The result is in the camera-local frame of the polarimeter.
pub fn reconstruct_cube(model: &ImagingModel, capture: &MeasurementSet) -> Result<ReconstructionResult> {
    capture.validate()?;
    model.validate()?;
    if capture.num_samples != 1 {
        return Err(Error::InvalidInput(format!(
            "scene capture must hold one sample, found {}",
            capture.num_samples
        )));
    }
    if capture.height != model.height || capture.width != model.width {
        return Err(Error::Dimension(format!(
            "capture is {}x{}, calibration is {}x{}",
            capture.height, capture.width, model.height, model.width
        )));
    }
    let nl = capture.wavelengths.len();
    let solved: Vec<Result<Reconstruction>> = (0..capture.num_pixels() * nl)
        .into_par_iter()
        .map(|idx| {
            let (p, l) = (idx / nl, idx % nl);
            reconstruct_stokes(&capture.intensities(0, l, p), &capture.angles, model, capture.wavelengths[l], p)
        })
        .collect();
    let mut cube = StokesCube::zeros(capture.height, capture.width, capture.wavelengths.clone());
    let mut residuals = Vec::with_capacity(solved.len());
    let mut invalid = 0;
    let mut failures = Vec::new();
    for (idx, r) in solved.into_iter().enumerate() {
        let (p, l) = (idx / nl, idx % nl);
        match r {
            Ok(rec) => {
                cube.set(p / capture.width, p % capture.width, l, rec.stokes);
                residuals.push(rec.residual_norm);
                invalid += usize::from(!rec.valid);
            }
            Err(e) => {
                residuals.push(f64::NAN);
                failures.push(PixelFailure {
                    row: p / capture.width,
                    col: p % capture.width,
                    wavelength_nm: capture.wavelengths[l],
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(ReconstructionResult {
        cube,
        residuals,
        invalid,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{default_capture_angles, generate_calibration_targets, uniform_angles};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_valid(rng: &mut ChaCha8Rng) -> StokesVector {
        let s0: f64 = rng.random_range(0.1..2.0);
        let dop: f64 = rng.random_range(0.0..1.0);
        let chi: f64 = rng.random_range(-0.8..0.8);
        let psi: f64 = rng.random_range(0.0..3.2);
        crate::polcore::stokes_from_poincare(&crate::polcore::PoincareParams::new(s0, dop, chi, psi)).unwrap()
    }

    fn simulate(model: &ImagingModel, s: &StokesVector, angles: &[f64], l: f64, p: usize) -> Vec<f64> {
        angles
            .iter()
            .map(|t| {
                let r = model.measurement_row(*t, l, p).unwrap();
                (0..4).map(|i| r[i] * s[i]).sum()
            })
            .collect()
    }

    #[test]
    fn ideal_reconstruction_examples() {
        let m = ImagingModel::ideal(1, 1);
        let angles = default_capture_angles();
        let r = reconstruct_stokes(&[0.5; 4], &angles, &m, 550.0, 0).unwrap();
        assert!(r.stokes.max_abs_diff(&StokesVector::unpolarized(1.0)) < 1e-12);
        let s = StokesVector::new(1.0, 0.0, 0.0, 1.0);
        let r = reconstruct_stokes(&simulate(&m, &s, &angles, 550.0, 0), &angles, &m, 550.0, 0).unwrap();
        assert!(r.stokes.max_abs_diff(&s) < 1e-6);
        assert!(r.valid);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let angles = default_capture_angles();
        for _ in 0..1000 {
            let row = [
                rng.random_range(0.4..0.6),
                rng.random_range(0.3..0.6),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.05..0.05),
            ];
            let m = ImagingModel::uniform(1, 1, row);
            let s = random_valid(&mut rng);
            let r = reconstruct_stokes(&simulate(&m, &s, &angles, 480.0, 0), &angles, &m, 480.0, 0).unwrap();
            assert!(r.stokes.max_abs_diff(&s) < 1e-6);
        }
    }

    #[test]
    fn lctf_row_is_recovered_and_scale_invariant() {
        let truth = [0.5, 0.45, 0.05, -0.025];
        let m = ImagingModel::uniform(1, 1, truth);
        let angles = uniform_angles(4);
        let samples: Vec<_> = generate_calibration_targets(16)
            .unwrap()
            .into_iter()
            .map(|s| CalibrationSample {
                stokes: s,
                intensities: simulate(&m, &s, &angles, 600.0, 0),
                pixel: 0,
                wavelength_nm: 600.0,
            })
            .collect();
        let fit = solve_lctf_row(&samples, &angles, 1.0).unwrap();
        for c in 0..4 {
            assert!((fit.x[c] - truth[c]).abs() < 1e-8);
        }
        let doubled: Vec<_> = samples.iter().chain(&samples).cloned().collect();
        let fit2 = solve_lctf_row(&doubled, &angles, 1.0).unwrap();
        for c in 0..4 {
            assert!((fit.x[c] - fit2.x[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioning() {
        let m = ImagingModel::ideal(1, 1);
        let angles = default_capture_angles();
        let k = angle_set_conditioning(&angles, &m, 550.0, 0).unwrap();
        assert!(k.is_finite() && k > 1.0);
        assert_eq!(angle_set_conditioning(&[0.3; 4], &m, 550.0, 0).unwrap(), f64::INFINITY);
        let err = reconstruct_stokes(&[0.5; 4], &[0.3; 4], &m, 550.0, 0).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
        assert!(err.to_string().contains("17.19°"));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = angle_set_min_singular_value(&angles, &m, 550.0, 0).unwrap();
        for _ in 0..100 {
            let mut five = angles.to_vec();
            five.push(rng.random_range(0.0..std::f64::consts::PI));
            assert!(angle_set_min_singular_value(&five, &m, 550.0, 0).unwrap() >= base - 1e-12);
        }
    }

    #[test]
    fn ill_conditioned_systems_fall_back_to_svd() {
        // nearly collinear columns: cond(AᵀA) ~ 1e12 but still full rank
        let mut a = DMatrix::zeros(6, 4);
        for r in 0..6 {
            let x = r as f64;
            a[(r, 0)] = 1.0;
            a[(r, 1)] = x;
            a[(r, 2)] = x * x;
            a[(r, 3)] = 1.0 + 1e-6 * x * x * x;
        }
        let truth = DVector::from_column_slice(&[0.3, -0.2, 0.1, 0.5]);
        let b = &a * &truth;
        let sol = solve_least_squares4(&a, &b, "test").unwrap();
        assert!(sol.condition > CONDITION_WARN);
        assert!(sol.residual_norm < 1e-9);
    }
}
