//! Spectro-polarimetric neural fields.
//!
//! A coordinate network maps position, view direction and wavelength to a
//! volume density and a physically valid Stokes vector. Around it sit the
//! pieces needed to use it on synthetic data with analytic ground truth:
//!
//! * [`polcore`]: Stokes vectors, Mueller matrices and polarization frames.
//! * [`field`]: encodings, the two-stage MLP and its exact gradients.
//! * [`renderer`]: pinhole cameras and volumetric Stokes integration.
//! * [`trainer`]: the polarization-weighted loss, optimizer and metrics.
//! * [`calib`]: LCTF + rotating-QWP image formation, calibration and
//!   per-pixel Stokes reconstruction.
//! * [`dataio`]: dataset files, analytic scenes, frame conversion and
//!   spectral utilities.

pub mod calib;
pub mod dataio;
pub mod error;
pub mod field;
pub mod polcore;
pub mod renderer;
pub mod trainer;

pub use error::{Error, Result};
pub use polcore::{Frame, MuellerMatrix, PoincareParams, PolarizationSummary, StokesVector};
