//! Conversion of measured cubes between per-ray Stokes frame conventions.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::StokesCube;
use crate::error::{Error, Result};
use crate::polcore::{build_frame_unchecked, rotate_stokes_between_frames, Frame, StokesVector};
use crate::renderer::{generate_ray, Camera, FrameConvention};

/// Camera-local frame of a ray with direction `d`: `z = -d`, `x` the
/// camera's right axis projected onto the plane normal to `z`, `y = z × x`.
pub fn camera_local_frame(camera: &Camera, d: &Vector3<f64>) -> Result<Frame> {
    let z = -d;
    let right = camera.right_axis();
    let x = right - z * right.dot(&z);
    let n = x.norm();
    if n < 1e-9 {
        return Err(Error::FrameMismatch(
            "ray direction is parallel to the camera right axis".into(),
        ));
    }
    let x = x / n;
    Ok(Frame { x, y: z.cross(&x), z })
}

/// Per-ray frame of `d` under `convention`.
pub fn ray_frame(camera: &Camera, d: &Vector3<f64>, convention: FrameConvention) -> Result<Frame> {
    match convention {
        FrameConvention::CameraLocal => camera_local_frame(camera, d),
        FrameConvention::Canonical => Ok(build_frame_unchecked(&-d)),
    }
}

/// Re-expresses every pixel of `cube` (seen through `camera`) from frame
/// convention `from` to `to`. Intensity and degree of polarization are
/// untouched; AoLP shifts by the angle between the frames.
pub fn convert_stokes_frames(
    cube: &StokesCube,
    camera: &Camera,
    from: FrameConvention,
    to: FrameConvention,
) -> Result<StokesCube> {
    if cube.height != camera.height || cube.width != camera.width {
        return Err(Error::Dimension(format!(
            "cube is {}x{} but the camera is {}x{}",
            cube.height, cube.width, camera.height, camera.width
        )));
    }
    let mut out = cube.clone();
    if from == to {
        return Ok(out);
    }
    let nl = cube.num_wavelengths();
    out.data
        .par_chunks_mut(nl * 4)
        .enumerate()
        .try_for_each(|(p, px)| -> Result<()> {
            let d = generate_ray(camera, p / camera.width, p % camera.width)?.direction;
            let f_from = ray_frame(camera, &d, from)?;
            let f_to = ray_frame(camera, &d, to)?;
            for s in px.chunks_exact_mut(4) {
                let v = StokesVector([s[0], s[1], s[2], s[3]]);
                s.copy_from_slice(&rotate_stokes_between_frames(&v, &f_from, &f_to)?.0);
            }
            Ok(())
        })?;
    Ok(out)
}

/// Camera-local measurements to the canonical frame used for training.
pub fn local_to_world_stokes(cube: &StokesCube, camera: &Camera) -> Result<StokesCube> {
    convert_stokes_frames(
        cube,
        camera,
        FrameConvention::CameraLocal,
        FrameConvention::Canonical,
    )
}

/// Inverse of [`local_to_world_stokes`].
pub fn world_to_local_stokes(cube: &StokesCube, camera: &Camera) -> Result<StokesCube> {
    convert_stokes_frames(
        cube,
        camera,
        FrameConvention::Canonical,
        FrameConvention::CameraLocal,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polcore::frame_angle;
    use crate::renderer::Intrinsics;
    use nalgebra::Matrix4;

    #[test]
    fn local_frame_is_right_handed() {
        let cam = Camera::look_at(
            Vector3::new(2.0, -3.0, 1.0),
            Vector3::zeros(),
            Vector3::z(),
            0.7,
            9,
            7,
        )
        .unwrap();
        for p in 0..cam.num_pixels() {
            let d = generate_ray(&cam, p / 9, p % 9).unwrap().direction;
            let f = camera_local_frame(&cam, &d).unwrap();
            assert!(f.orthonormality_residual() < 1e-12);
            assert!((f.x.cross(&f.y) - f.z).norm() < 1e-12);
        }
    }

    #[test]
    fn matching_frames_are_identity() {
        // camera looking down -z with right axis +x: at the principal ray the
        // local frame is z=(0,0,1), x=(1,0,0), the canonical one too
        let mut pose = Matrix4::identity();
        pose[(1, 1)] = -1.0;
        pose[(2, 2)] = -1.0;
        let cam = Camera::new(
            Intrinsics {
                fx: 1.0,
                fy: 1.0,
                cx: 0.5,
                cy: 0.5,
            },
            1,
            1,
            pose,
            0.0,
            1.0,
        )
        .unwrap();
        let d = generate_ray(&cam, 0, 0).unwrap().direction;
        let local = camera_local_frame(&cam, &d).unwrap();
        let canon = build_frame_unchecked(&-d);
        assert!(frame_angle(&local, &canon).unwrap().abs() < 1e-12);
        let mut cube = StokesCube::zeros(1, 1, vec![500.0]);
        cube.set(0, 0, 0, StokesVector::new(1.0, 0.3, 0.4, 0.1));
        let out = local_to_world_stokes(&cube, &cam).unwrap();
        assert!(out.max_abs_diff(&cube) < 1e-12);
    }
}
