//! Dataset files, analytic scenes, frame conversion, spectral utilities and
//! polarization image products.

mod cube;
mod dataset;
mod frames;
mod products;
mod scene;
mod spectral;

pub use cube::StokesCube;
pub use dataset::{
    encode_cube, load_cube, load_dataset, quantize_cube, save_cube, save_dataset, write_atomic,
    CubeHeader, MultiViewDataset, Split, View, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use frames::{
    camera_local_frame, convert_stokes_frames, local_to_world_stokes, ray_frame,
    world_to_local_stokes,
};
pub use products::{
    add_cube_noise, add_sensor_noise, relight_spectral, separate_polarized, NoiseModel,
    Separation,
};
pub use scene::{
    render_ground_truth, EmissionKey, OrbitRig, Primitive, SceneSpec, BLOB_CUTOFF,
    MIN_BLOB_SUBDIVISIONS,
};
pub use spectral::{
    color_matching_functions, fit_spectral_polynomial, grid_index, spectrum_to_rgb, srgb_gamma,
    wavelength_grid, Rgb, SpectralCurve, SpectralPolynomial, GRID_LEN,
};

use crate::error::Result;
use crate::renderer::{Camera, FrameConvention};

/// Renders ground truth for every `(id, camera, split)` and packages it as
/// a dataset in `convention`.
pub fn synthesize_dataset(
    scene: &SceneSpec,
    views: Vec<(String, Camera, Split)>,
    wavelengths: &[f64],
    subdivisions: usize,
    convention: FrameConvention,
) -> Result<MultiViewDataset> {
    let mut out = Vec::with_capacity(views.len());
    for (id, mut camera, split) in views {
        let canonical = render_ground_truth(scene, &camera, wavelengths, subdivisions)?;
        let cube =
            convert_stokes_frames(&canonical, &camera, FrameConvention::Canonical, convention)?;
        camera.frame_convention = convention;
        out.push(View {
            id,
            camera,
            split,
            cube,
        });
    }
    let ds = MultiViewDataset {
        wavelengths: wavelengths.to_vec(),
        bounds: scene.bounds,
        frame_convention: convention,
        views: out,
    };
    ds.validate()?;
    Ok(ds)
}
