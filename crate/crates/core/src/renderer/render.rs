use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::{composite, quadrature_weights, sample_bins, RaySamples, Weights};
use super::{generate_ray, Aabb, Camera, Ray};
use crate::dataio::StokesCube;
use crate::error::{Error, Result};
use crate::polcore::StokesVector;

/// Sampling and compositing options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub stratified: bool,
    pub seed: u64,
    pub background: StokesVector,
    /// Restrict sampling to the part of each ray inside this box.
    pub clip_to: Option<Aabb>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 128,
            stratified: false,
            seed: 0,
            background: StokesVector::ZERO,
            clip_to: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            return Err(Error::InvalidInput("samples_per_ray must be at least 1".into()));
        }
        if !self.background.is_valid(crate::polcore::DEFAULT_VALIDITY_TOLERANCE) {
            return Err(Error::InvalidInput(format!(
                "background {:?} is not a valid Stokes vector",
                self.background
            )));
        }
        if let Some(b) = &self.clip_to {
            b.validate()?;
        }
        Ok(())
    }

    /// Independent random stream for ray `index`.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// The interval actually sampled on `ray`, or `None` if it misses the
    /// clip box.
    pub fn sampled_ray(&self, ray: &Ray) -> Option<Ray> {
        match &self.clip_to {
            Some(b) => ray.clipped_to(b),
            None => Some(*ray),
        }
    }

    /// Samples for ray `index`; deterministic given the seed.
    pub fn samples_for(&self, ray: &Ray, index: u64) -> RaySamples {
        let mut rng = self.rng_for(index);
        sample_bins(ray.near, ray.far, self.samples_per_ray, self.stratified, &mut rng)
    }
}

/// Field values at a batch of points.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSamples {
    /// One density per point.
    pub sigma: Vec<f64>,
    /// Stokes vectors indexed `l·n + i` for wavelength `l`, point `i`.
    pub stokes: Vec<StokesVector>,
}

/// Anything that can be rendered: density plus per-wavelength Stokes
/// emission. Directions are unit propagation directions in world space and
/// the returned Stokes vectors are expressed in the frame `z = -d`,
/// `(x, y) = build_frame(z)`.
pub trait StokesField: Sync {
    fn eval_points(
        &self,
        positions: &[Vector3<f64>],
        directions: &[Vector3<f64>],
        wavelengths: &[f64],
    ) -> Result<FieldSamples>;
}

/// Rendered Stokes vectors of one ray plus its quadrature data.
#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    /// One Stokes vector per wavelength.
    pub stokes: Vec<StokesVector>,
    pub samples: RaySamples,
    pub weights: Weights,
}

fn check_outputs(s: &FieldSamples, n: usize, nl: usize) -> Result<()> {
    if s.sigma.len() != n || s.stokes.len() != n * nl {
        return Err(Error::Shape(format!(
            "field returned {} densities and {} Stokes vectors for {n} points x {nl} wavelengths",
            s.sigma.len(),
            s.stokes.len()
        )));
    }
    if s.sigma.iter().any(|v| !v.is_finite()) || s.stokes.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field output".into()));
    }
    Ok(())
}

/// Renders a batch of rays at every wavelength with one field evaluation.
/// Ray `k` of the batch draws its samples from stream `first_index + k`.
pub fn render_rays<F: StokesField + ?Sized>(
    field: &F,
    rays: &[Ray],
    wavelengths: &[f64],
    cfg: &RenderConfig,
    first_index: u64,
) -> Result<Vec<RayRender>> {
    let nl = wavelengths.len();
    let ns = cfg.samples_per_ray;
    let mut positions = Vec::new();
    let mut directions = Vec::new();
    let mut plan = Vec::with_capacity(rays.len());
    for (k, ray) in rays.iter().enumerate() {
        let samples = cfg
            .sampled_ray(ray)
            .map(|r| cfg.samples_for(&r, first_index + k as u64));
        if let Some(s) = &samples {
            for t in &s.t {
                positions.push(ray.at(*t));
                directions.push(ray.direction);
            }
        }
        plan.push(samples);
    }
    let out = if positions.is_empty() {
        FieldSamples {
            sigma: vec![],
            stokes: vec![],
        }
    } else {
        field.eval_points(&positions, &directions, wavelengths)?
    };
    let n = positions.len();
    check_outputs(&out, n, nl)?;

    let mut offset = 0;
    let mut renders = Vec::with_capacity(rays.len());
    for samples in plan {
        let Some(samples) = samples else {
            renders.push(RayRender {
                stokes: vec![cfg.background; nl],
                samples: RaySamples {
                    t: vec![],
                    delta: vec![],
                },
                weights: quadrature_weights(&[], &[]),
            });
            continue;
        };
        let weights = quadrature_weights(&out.sigma[offset..offset + ns], &samples.delta);
        let stokes = (0..nl)
            .map(|l| composite(&weights, |i| out.stokes[l * n + offset + i], &cfg.background))
            .collect();
        renders.push(RayRender {
            stokes,
            samples,
            weights,
        });
        offset += ns;
    }
    Ok(renders)
}

/// Renders one ray at one wavelength. The result is expressed in the ray's
/// output frame `z = -d`.
pub fn render_stokes<F: StokesField + ?Sized>(
    field: &F,
    ray: &Ray,
    wavelength_nm: f64,
    cfg: &RenderConfig,
) -> Result<StokesVector> {
    cfg.validate()?;
    check_ray(ray)?;
    let r = render_rays(field, std::slice::from_ref(ray), &[wavelength_nm], cfg, 0)?;
    Ok(r[0].stokes[0])
}

fn check_ray(ray: &Ray) -> Result<()> {
    if (ray.direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("ray direction is not unit length".into()));
    }
    if !(ray.near >= 0.0 && ray.far > ray.near) {
        return Err(Error::InvalidInput(format!(
            "ray interval [{}, {}] is empty",
            ray.near, ray.far
        )));
    }
    Ok(())
}

/// A rendered view: the Stokes cube and every pixel's quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub cube: StokesCube,
    /// Weights of pixel `row·W + col`; empty when the ray misses the clip box.
    pub weights: Vec<Vec<f64>>,
}

/// Rays rendered per field evaluation in [`render_image`].
const RAY_CHUNK: usize = 64;

/// Renders every pixel of `camera` at every wavelength. Pixel `p` uses
/// random stream `p`, so the output does not depend on the thread count.
pub fn render_image<F: StokesField + ?Sized>(
    field: &F,
    camera: &Camera,
    wavelengths: &[f64],
    cfg: &RenderConfig,
) -> Result<RenderedImage> {
    cfg.validate()?;
    camera.validate()?;
    if wavelengths.is_empty() {
        return Err(Error::InvalidInput("no wavelengths to render".into()));
    }
    let npix = camera.num_pixels();
    let rays = (0..npix)
        .map(|p| generate_ray(camera, p / camera.width, p % camera.width))
        .collect::<Result<Vec<_>>>()?;
    let chunks = rays
        .par_chunks(RAY_CHUNK)
        .enumerate()
        .map(|(c, chunk)| render_rays(field, chunk, wavelengths, cfg, (c * RAY_CHUNK) as u64))
        .collect::<Result<Vec<_>>>()?;

    let mut cube = StokesCube::zeros(camera.height, camera.width, wavelengths.to_vec());
    let mut weights = Vec::with_capacity(npix);
    for (p, r) in chunks.into_iter().flatten().enumerate() {
        for (l, s) in r.stokes.iter().enumerate() {
            cube.set(p / camera.width, p % camera.width, l, *s);
        }
        weights.push(r.weights.weights);
    }
    Ok(RenderedImage { cube, weights })
}
