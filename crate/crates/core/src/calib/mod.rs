//! LCTF + rotating-QWP polarimeter: image formation, calibration of the
//! per-pixel LCTF modulation rows, and per-pixel Stokes reconstruction.

mod io;
mod model;
mod solve;

pub use io::{
    decode_calibration, encode_calibration, load_calibration, load_curve_csv, load_measurements,
    save_calibration, save_curve_csv, save_measurements, simulate_calibration_capture,
    simulate_scene_capture, CalibrationHeader, MeasurementSet, CAPTURE_FILE,
};
pub use model::{
    calibration_grid, default_capture_angles, generate_calibration_targets, simulate_measurement,
    uniform_angles, ImagingModel, IDEAL_LCTF_ROW,
};
pub use solve::{
    angle_set_conditioning, angle_set_min_singular_value, calibrate, reconstruct_cube,
    reconstruct_stokes, solve_lctf_row, solve_least_squares4, CalibrationResult,
    CalibrationSample, LsqSolution, PixelFailure, Reconstruction, ReconstructionResult,
    CONDITION_WARN,
};
