use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// `[-half, half]³`
    pub fn cube(half: f64) -> Self {
        Aabb {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite()
            {
                return Err(Error::InvalidInput(format!("degenerate bounds {self:?}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Maps the box affinely onto `[-1, 1]³`.
    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|a, _| 2.0 * (p[a] - self.min[a]) / (self.max[a] - self.min[a]) - 1.0)
    }

    /// Parametric entry and exit distances of `origin + t·dir`, if the line
    /// crosses the box with `exit > max(entry, 0)`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.min[a] - origin[a]) * inv;
            let mut tb = (self.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0.max(0.0)).then_some((t0, t1))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Frame in which a camera's measured Stokes vectors are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameConvention {
    /// Per ray: `z = -d`, `x` = camera right axis projected onto the plane
    /// normal to `z`, `y = z × x`.
    CameraLocal,
    /// Per ray: `z = -d`, `(x, y) = build_frame(z)`. This is what the
    /// renderer produces.
    #[default]
    Canonical,
}

/// A calibrated pinhole camera.
///
/// Camera axes follow the computer-vision convention: `+x` right, `+y` down
/// the image, `+z` forward. `pose` maps camera coordinates to world
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub pose: Matrix4<f64>,
    pub near: f64,
    pub far: f64,
    pub frame_convention: FrameConvention,
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        pose: Matrix4<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            intrinsics,
            width,
            height,
            pose,
            near,
            far,
            frame_convention: FrameConvention::Canonical,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intrinsics.fx > 0.0 && self.intrinsics.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        if !(self.near >= 0.0 && self.far > self.near) {
            return Err(Error::InvalidInput(format!(
                "clip range [{}, {}] is empty",
                self.near, self.far
            )));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "pose rotation is not orthonormal (residual {err:e})"
            )));
        }
        if self.pose.row(3).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| *a != b) {
            return Err(Error::InvalidInput("pose bottom row must be [0 0 0 1]".into()));
        }
        Ok(())
    }

    /// A camera at `eye` looking at `target`, with `up` giving the upward
    /// image direction and `fov_y` the vertical field of view in radians.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidInput("up vector is parallel to the view axis".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let mut pose = Matrix4::identity();
        pose.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        pose.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
        pose.fixed_view_mut::<3, 1>(0, 2).copy_from(&forward);
        pose.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let intr = Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        };
        let dist = (target - eye).norm();
        Camera::new(intr, width, height, pose, 0.0, 4.0 * dist.max(1.0))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.pose.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// World-space direction of the camera's `+x` (image right) axis.
    pub fn right_axis(&self) -> Vector3<f64> {
        self.pose.fixed_view::<3, 1>(0, 0).into_owned()
    }

    pub fn forward_axis(&self) -> Vector3<f64> {
        self.pose.fixed_view::<3, 1>(0, 2).into_owned()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// `r(t) = origin + t·direction` for `t ∈ [near, far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    /// Restricts the ray to the part inside `bounds`, if any.
    pub fn clipped_to(&self, bounds: &Aabb) -> Option<Ray> {
        let (t0, t1) = bounds.intersect(&self.origin, &self.direction)?;
        let near = self.near.max(t0);
        let far = self.far.min(t1);
        (far > near).then_some(Ray { near, far, ..*self })
    }
}

/// Ray through the center of pixel `(row, col)`.
pub fn generate_ray(camera: &Camera, row: usize, col: usize) -> Result<Ray> {
    if row >= camera.height || col >= camera.width {
        return Err(Error::InvalidInput(format!(
            "pixel ({row}, {col}) outside {}x{} image",
            camera.height, camera.width
        )));
    }
    let k = &camera.intrinsics;
    let d_cam = Vector3::new(
        (col as f64 + 0.5 - k.cx) / k.fx,
        (row as f64 + 0.5 - k.cy) / k.fy,
        1.0,
    );
    let direction = (camera.rotation() * d_cam).normalize();
    Ok(Ray {
        origin: camera.center(),
        direction,
        near: camera.near,
        far: camera.far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera() -> Camera {
        Camera::new(
            Intrinsics {
                fx: 10.0,
                fy: 10.0,
                cx: 2.5,
                cy: 1.5,
            },
            5,
            3,
            Matrix4::identity(),
            0.0,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn principal_pixel_looks_forward() {
        let r = generate_ray(&axis_camera(), 1, 2).unwrap();
        assert_eq!(r.direction, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn neighbouring_pixels_differ_horizontally() {
        let c = axis_camera();
        let a = generate_ray(&c, 1, 2).unwrap().direction;
        let b = generate_ray(&c, 1, 3).unwrap().direction;
        assert_eq!(a.y, b.y);
        assert!(b.x > a.x);
    }

    #[test]
    fn all_directions_are_unit() {
        let c = Camera::look_at(
            Vector3::new(3.0, -2.0, 1.5),
            Vector3::zeros(),
            Vector3::z(),
            0.8,
            17,
            11,
        )
        .unwrap();
        for r in 0..c.height {
            for col in 0..c.width {
                let d = generate_ray(&c, r, col).unwrap().direction;
                assert!((d.norm() - 1.0).abs() < 1e-9);
            }
        }
        assert!(generate_ray(&c, 11, 0).is_err());
    }

    #[test]
    fn look_at_centers_the_target() {
        let eye = Vector3::new(0.0, -4.0, 2.0);
        let c = Camera::look_at(eye, Vector3::zeros(), Vector3::z(), 0.6, 8, 8).unwrap();
        let toward = -eye.normalize();
        assert!((c.forward_axis() - toward).norm() < 1e-12);
        // image "up" (negative y) should have a positive world z component
        let down = c.pose.fixed_view::<3, 1>(0, 1).into_owned();
        assert!(down.z < 0.0);
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        let mut c = axis_camera();
        c.intrinsics.fx = -1.0;
        assert!(c.validate().is_err());
        let mut c = axis_camera();
        c.pose[(0, 0)] = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn box_intersection() {
        let b = Aabb::cube(1.0);
        let (t0, t1) = b
            .intersect(&Vector3::new(0.0, 0.0, -3.0), &Vector3::z())
            .unwrap();
        assert_eq!((t0, t1), (2.0, 4.0));
        assert!(b.intersect(&Vector3::new(2.0, 0.0, -3.0), &Vector3::z()).is_none());
        assert!(b.intersect(&Vector3::new(0.0, 0.0, 3.0), &Vector3::z()).is_none());
    }
}
