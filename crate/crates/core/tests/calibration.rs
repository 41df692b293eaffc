use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectropol::calib::{
    calibrate, calibration_grid, default_capture_angles, generate_calibration_targets,
    load_calibration, reconstruct_cube, save_calibration, simulate_calibration_capture,
    simulate_scene_capture, uniform_angles, ImagingModel, IDEAL_LCTF_ROW,
};
use spectropol::dataio::{SpectralCurve, StokesCube};
use spectropol::{Error, StokesVector};

fn perturbed_model(seed: u64, h: usize, w: usize) -> ImagingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ImagingModel::ideal(h, w);
    m.sensor_qe = SpectralCurve::from_fn(|l| 0.4 + 0.5 * ((l - 450.0) / 200.0));
    m.filter = SpectralCurve::from_fn(|l| 0.95 - 0.1 * ((l - 550.0) / 100.0).powi(2));
    for l in calibration_grid() {
        for p in 0..h * w {
            let row = IDEAL_LCTF_ROW.map(|v| v + rng.random_range(-0.05..0.05));
            m.set_row(l, p, row).unwrap();
        }
    }
    m
}

fn random_cube(seed: u64, h: usize, w: usize) -> StokesCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cube = StokesCube::zeros(h, w, calibration_grid());
    for p in 0..h * w {
        for l in 0..cube.num_wavelengths() {
            let s0 = rng.random_range(0.1..1.0);
            let dop = rng.random_range(0.0..1.0);
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
            let k = s0 * dop / n;
            cube.set(p / w, p % w, l, StokesVector::new(s0, k * v[0], k * v[1], k * v[2]));
        }
    }
    cube
}

#[test]
fn calibrate_then_reconstruct_recovers_the_scene() {
    let (h, w) = (3, 4);
    let truth = perturbed_model(1, h, w);
    let targets = generate_calibration_targets(16).unwrap();
    let capture =
        simulate_calibration_capture(&truth, &targets, &uniform_angles(4), &calibration_grid(), 0.0, 0)
            .unwrap();
    let mut base = ImagingModel::ideal(h, w);
    base.sensor_qe = truth.sensor_qe;
    base.filter = truth.filter;
    let fit = calibrate(&base, &capture).unwrap();
    assert!(fit.failures.is_empty());
    for (a, b) in fit.model.rows.iter().zip(&truth.rows) {
        for c in 0..4 {
            assert!((a[c] - b[c]).abs() < 1e-9);
        }
    }

    let cube = random_cube(2, h, w);
    let scene = simulate_scene_capture(&truth, &cube, &default_capture_angles(), 0.0, 3).unwrap();
    let rec = reconstruct_cube(&fit.model, &scene).unwrap();
    assert!(rec.failures.is_empty());
    assert_eq!(rec.invalid, 0);
    assert!(rec.cube.max_abs_diff(&cube) < 1e-6);
}

#[test]
fn calibration_file_round_trip() {
    let m = perturbed_model(4, 2, 2);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.nscl");
    let angles = uniform_angles(4);
    save_calibration(&path, &m, &angles).unwrap();
    let (back, header) = load_calibration(&path).unwrap();
    // rows are stored at single precision
    let rounded: Vec<[f64; 4]> = m.rows.iter().map(|r| r.map(|v| v as f32 as f64)).collect();
    assert_eq!(back.rows, rounded);
    assert_eq!((header.height, header.width), (2, 2));
    assert_eq!(header.wavelengths_nm, calibration_grid());
}

#[test]
fn repeated_angles_cannot_be_inverted() {
    let m = ImagingModel::ideal(1, 1);
    let cube = random_cube(5, 1, 1);
    let scene = simulate_scene_capture(&m, &cube, &[0.3, 0.3, 0.3, 0.3], 0.0, 0).unwrap();
    match reconstruct_cube(&m, &scene) {
        Ok(r) => assert!(!r.failures.is_empty()),
        Err(e) => assert!(matches!(e, Error::IllConditioned { .. } | Error::RankDeficient { .. })),
    }
}
