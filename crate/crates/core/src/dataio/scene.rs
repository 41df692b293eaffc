//! Analytic emissive scenes and their ground-truth renders.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StokesCube;
use crate::error::{Error, Result};
use crate::polcore::{stokes_from_poincare, PoincareParams, StokesVector};
use crate::renderer::{generate_ray, Aabb, Camera, FieldSamples, Ray, StokesField};

/// Blob density is cut to zero beyond this many radii.
pub const BLOB_CUTOFF: f64 = 3.0;

/// Minimum number of sub-segments used inside blob support.
pub const MIN_BLOB_SUBDIVISIONS: usize = 4096;

/// Emission at one wavelength, in the per-ray output frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionKey {
    pub wavelength_nm: f64,
    pub s0: f64,
    pub dop: f64,
    /// Ellipticity angle χ, radians.
    pub chi: f64,
    /// Azimuth ψ, radians.
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Axis-aligned box of constant density.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        sigma: f64,
        emission: Vec<EmissionKey>,
    },
    /// Isotropic Gaussian density `sigma·exp(-|x-c|²/2r²)`, truncated at
    /// [`BLOB_CUTOFF`] radii.
    Blob {
        center: [f64; 3],
        radius: f64,
        sigma: f64,
        emission: Vec<EmissionKey>,
    },
}

impl Primitive {
    fn emission_keys(&self) -> &[EmissionKey] {
        match self {
            Primitive::Box { emission, .. } | Primitive::Blob { emission, .. } => emission,
        }
    }

    /// Bounding box of the primitive's support.
    fn support(&self) -> Aabb {
        match self {
            Primitive::Box { min, max, .. } => Aabb {
                min: *min,
                max: *max,
            },
            Primitive::Blob { center, radius, .. } => {
                let r = BLOB_CUTOFF * radius;
                Aabb {
                    min: center.map(|c| c - r),
                    max: center.map(|c| c + r),
                }
            }
        }
    }

    pub fn density(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Box { min, max, sigma, .. } => {
                if (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]) {
                    *sigma
                } else {
                    0.0
                }
            }
            Primitive::Blob {
                center,
                radius,
                sigma,
                ..
            } => {
                let q = (p - Vector3::from(*center)).norm_squared() / (radius * radius);
                if q <= BLOB_CUTOFF * BLOB_CUTOFF {
                    sigma * (-0.5 * q).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Emitted Stokes vector at `wavelength_nm`, linearly interpolated
    /// between keys and held constant outside them.
    pub fn emission(&self, wavelength_nm: f64) -> StokesVector {
        let keys = self.emission_keys();
        let to_stokes = |k: &EmissionKey| {
            stokes_from_poincare(&PoincareParams::new(k.s0, k.dop, k.chi, k.psi))
                .unwrap_or(StokesVector::ZERO)
        };
        let hi = keys.partition_point(|k| k.wavelength_nm < wavelength_nm);
        if hi == 0 {
            return to_stokes(&keys[0]);
        }
        if hi == keys.len() {
            return to_stokes(&keys[hi - 1]);
        }
        let (a, b) = (&keys[hi - 1], &keys[hi]);
        let u = (wavelength_nm - a.wavelength_nm) / (b.wavelength_nm - a.wavelength_nm);
        to_stokes(a) * (1.0 - u) + to_stokes(b) * u
    }

    /// Parameter interval where `ray` may see nonzero density.
    fn ray_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        match self {
            Primitive::Box { .. } => self.support().intersect(&ray.origin, &ray.direction),
            Primitive::Blob { center, radius, .. } => {
                let r = BLOB_CUTOFF * radius;
                let oc = ray.origin - Vector3::from(*center);
                let b = oc.dot(&ray.direction);
                let disc = b * b - (oc.norm_squared() - r * r);
                (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
            }
        }
    }

    fn validate(&self, bounds: &Aabb) -> Result<()> {
        let (sigma, keys) = match self {
            Primitive::Box {
                min, max, sigma, ..
            } => {
                Aabb {
                    min: *min,
                    max: *max,
                }
                .validate()?;
                (*sigma, self.emission_keys())
            }
            Primitive::Blob { radius, sigma, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidInput(format!("blob radius {radius} must be positive")));
                }
                (*sigma, self.emission_keys())
            }
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("density {sigma} must be nonnegative")));
        }
        if keys.is_empty() {
            return Err(Error::InvalidInput("primitive has no emission keys".into()));
        }
        for k in keys {
            PoincareParams::new(k.s0, k.dop, k.chi, k.psi).validate()?;
        }
        if keys.windows(2).any(|w| w[1].wavelength_nm <= w[0].wavelength_nm) {
            return Err(Error::InvalidInput(
                "emission keys must be sorted by strictly increasing wavelength".into(),
            ));
        }
        let s = self.support();
        if (0..3).any(|a| s.min[a] < bounds.min[a] || s.max[a] > bounds.max[a]) {
            return Err(Error::InvalidInput(format!(
                "primitive support {s:?} extends outside the scene bounds"
            )));
        }
        Ok(())
    }
}

/// A scene of analytic emissive primitives. Overlapping primitives add
/// their densities and mix their emission in proportion to density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: StokesVector,
    pub bounds: Aabb,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !self.background.is_valid(crate::polcore::DEFAULT_VALIDITY_TOLERANCE) {
            return Err(Error::InvalidInput("background is not a valid Stokes vector".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate(&self.bounds)
                .map_err(|e| Error::InvalidInput(format!("primitive {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SceneSpec::from_json(&text, path)
    }

    /// Density and emission per wavelength at `p`, with precomputed
    /// per-primitive emission `em[k][l]`.
    fn sample(&self, p: &Vector3<f64>, em: &[Vec<StokesVector>], out: &mut [StokesVector]) -> f64 {
        let mut sigma = 0.0;
        out.fill(StokesVector::ZERO);
        for (k, prim) in self.primitives.iter().enumerate() {
            let s = prim.density(p);
            if s > 0.0 {
                sigma += s;
                for (o, e) in out.iter_mut().zip(&em[k]) {
                    *o += *e * s;
                }
            }
        }
        if sigma > 0.0 {
            for o in out.iter_mut() {
                *o = *o * (1.0 / sigma);
            }
        }
        sigma
    }

    fn emission_table(&self, wavelengths: &[f64]) -> Vec<Vec<StokesVector>> {
        self.primitives
            .iter()
            .map(|p| wavelengths.iter().map(|l| p.emission(*l)).collect())
            .collect()
    }

    /// Integrates one ray at every wavelength. Constant-density stretches are
    /// composited in closed form; stretches inside blob support are split
    /// into `subdivisions` pieces.
    pub fn integrate_ray(&self, ray: &Ray, wavelengths: &[f64], subdivisions: usize) -> Vec<StokesVector> {
        let em = self.emission_table(wavelengths);
        self.integrate_with(ray, &em, wavelengths.len(), subdivisions.max(MIN_BLOB_SUBDIVISIONS))
    }

    fn integrate_with(
        &self,
        ray: &Ray,
        em: &[Vec<StokesVector>],
        nl: usize,
        subdivisions: usize,
    ) -> Vec<StokesVector> {
        let mut cuts = vec![ray.near, ray.far];
        let mut blob_spans = Vec::new();
        for p in &self.primitives {
            if let Some((a, b)) = p.ray_interval(ray) {
                for t in [a, b] {
                    if t > ray.near && t < ray.far {
                        cuts.push(t);
                    }
                }
                if matches!(p, Primitive::Blob { .. }) {
                    blob_spans.push((a, b));
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut acc = vec![StokesVector::ZERO; nl];
        let mut transmittance = 1.0;
        let mut s = vec![StokesVector::ZERO; nl];
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let in_blob = blob_spans.iter().any(|(lo, hi)| mid > *lo && mid < *hi);
            let pieces = if in_blob { subdivisions } else { 1 };
            let dt = (b - a) / pieces as f64;
            for j in 0..pieces {
                let t = a + (j as f64 + 0.5) * dt;
                let sigma = self.sample(&ray.at(t), em, &mut s);
                if sigma == 0.0 {
                    continue;
                }
                let surv = (-sigma * dt).exp();
                let w = transmittance * (1.0 - surv);
                for (o, e) in acc.iter_mut().zip(&s) {
                    *o += *e * w;
                }
                transmittance *= surv;
            }
        }
        for o in acc.iter_mut() {
            *o += self.background * transmittance;
        }
        acc
    }
}

impl StokesField for SceneSpec {
    fn eval_points(
        &self,
        positions: &[Vector3<f64>],
        _directions: &[Vector3<f64>],
        wavelengths: &[f64],
    ) -> Result<FieldSamples> {
        let em = self.emission_table(wavelengths);
        let n = positions.len();
        let nl = wavelengths.len();
        let mut sigma = Vec::with_capacity(n);
        let mut stokes = vec![StokesVector::ZERO; n * nl];
        let mut s = vec![StokesVector::ZERO; nl];
        for (i, p) in positions.iter().enumerate() {
            sigma.push(self.sample(p, &em, &mut s));
            for l in 0..nl {
                stokes[l * n + i] = s[l];
            }
        }
        Ok(FieldSamples { sigma, stokes })
    }
}

/// Ground-truth Stokes cube of `scene` seen by `camera`, in the canonical
/// per-ray frame. `subdivisions` (at least [`MIN_BLOB_SUBDIVISIONS`]) sets
/// the quadrature resolution inside blobs.
pub fn render_ground_truth(
    scene: &SceneSpec,
    camera: &Camera,
    wavelengths: &[f64],
    subdivisions: usize,
) -> Result<StokesCube> {
    scene.validate()?;
    camera.validate()?;
    let em = scene.emission_table(wavelengths);
    let nl = wavelengths.len();
    let sub = subdivisions.max(MIN_BLOB_SUBDIVISIONS);
    let mut cube = StokesCube::zeros(camera.height, camera.width, wavelengths.to_vec());
    cube.data
        .par_chunks_mut(nl * 4)
        .enumerate()
        .try_for_each(|(p, px)| -> Result<()> {
            let ray = generate_ray(camera, p / camera.width, p % camera.width)?;
            for (l, s) in scene.integrate_with(&ray, &em, nl, sub).iter().enumerate() {
                px[l * 4..l * 4 + 4].copy_from_slice(&s.0);
            }
            Ok(())
        })?;
    Ok(cube)
}

/// Cameras evenly spaced on a horizontal circle around the origin, looking
/// at it with `+z` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitRig {
    pub count: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Azimuth of the first camera.
    #[serde(default)]
    pub phase_deg: f64,
}

impl OrbitRig {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let el = self.elevation_deg.to_radians();
        (0..self.count)
            .map(|i| {
                let az = self.phase_deg.to_radians()
                    + std::f64::consts::TAU * i as f64 / self.count as f64;
                let eye = self.radius
                    * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                Camera::look_at(
                    eye,
                    Vector3::zeros(),
                    Vector3::z(),
                    self.fov_deg.to_radians(),
                    self.width,
                    self.height,
                )
            })
            .collect()
    }
}
