//! Exponential-transmittance quadrature of the volume rendering integral.
//!
//! Density and emission are taken as constant over each segment, so a ray is
//! a list of `(σᵢ, δᵢ, sᵢ)` and
//!
//! ```text
//! Tᵢ = exp(-Σ_{j<i} σⱼ δⱼ),   wᵢ = Tᵢ (1 - exp(-σᵢ δᵢ)),
//! s  = Σ wᵢ sᵢ + T_{N+1} · s_background
//! ```

use rand::Rng;

use crate::polcore::StokesVector;

use super::{Ray, RenderConfig};

/// Sample distances along a ray with their segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Splits `[near, far]` into `n` equal bins and places one sample per bin:
/// uniformly at random when `stratified`, at the bin midpoint otherwise. Each
/// sample's segment length is its bin width.
pub fn sample_bins<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    n: usize,
    stratified: bool,
    rng: &mut R,
) -> RaySamples {
    let width = (far - near) / n as f64;
    let t = (0..n)
        .map(|i| {
            let u = if stratified { rng.random::<f64>() } else { 0.5 };
            near + (i as f64 + u) * width
        })
        .collect();
    RaySamples {
        t,
        delta: vec![width; n],
    }
}

/// Samples along `ray` per `cfg`; deterministic given `cfg.seed`.
pub fn sample_along_ray(ray: &Ray, cfg: &RenderConfig) -> RaySamples {
    cfg.samples_for(ray, 0)
}

/// Quadrature weights of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `wᵢ = Tᵢ (1 - exp(-σᵢ δᵢ))`
    pub weights: Vec<f64>,
    /// `T_{i+1}`, the transmittance just past sample `i`.
    pub transmittance_after: Vec<f64>,
}

impl Weights {
    /// Transmittance left after the last sample.
    pub fn residual(&self) -> f64 {
        self.transmittance_after.last().copied().unwrap_or(1.0)
    }

    /// Accumulated opacity `Σ wᵢ`.
    pub fn opacity(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn quadrature_weights(sigma: &[f64], delta: &[f64]) -> Weights {
    let mut weights = Vec::with_capacity(sigma.len());
    let mut after = Vec::with_capacity(sigma.len());
    let mut transmittance = 1.0;
    for (s, d) in sigma.iter().zip(delta) {
        let surv = (-s * d).exp();
        weights.push(transmittance * (1.0 - surv));
        transmittance *= surv;
        after.push(transmittance);
    }
    Weights {
        weights,
        transmittance_after: after,
    }
}

/// `Σ wᵢ sᵢ + T_res · background`
pub fn composite(
    w: &Weights,
    stokes: impl Fn(usize) -> StokesVector,
    background: &StokesVector,
) -> StokesVector {
    let mut acc = *background * w.residual();
    for (i, wi) in w.weights.iter().enumerate() {
        acc += stokes(i) * *wi;
    }
    acc
}

/// Renders one ray from explicit segments.
pub fn composite_segments(
    sigma: &[f64],
    delta: &[f64],
    stokes: &[StokesVector],
    background: &StokesVector,
) -> StokesVector {
    composite(&quadrature_weights(sigma, delta), |i| stokes[i], background)
}

/// Density part of the reverse pass of [`composite`] for one wavelength.
///
/// Given `g = ∂L/∂s`, adds `∂L/∂σᵢ` into `d_sigma`. The emission part,
/// `∂L/∂sᵢ = wᵢ·g`, is left to the caller.
pub fn composite_sigma_vjp(
    delta: &[f64],
    w: &Weights,
    stokes: impl Fn(usize) -> StokesVector,
    background: &StokesVector,
    g: &[f64; 4],
    d_sigma: &mut [f64],
) {
    let dot = |s: &StokesVector| g[0] * s[0] + g[1] * s[1] + g[2] * s[2] + g[3] * s[3];
    // suffix = Σ_{j>i} wⱼ⟨g,sⱼ⟩ + T_res⟨g,bg⟩
    let mut suffix = w.residual() * dot(background);
    for i in (0..w.weights.len()).rev() {
        let gs = dot(&stokes(i));
        d_sigma[i] += delta[i] * (w.transmittance_after[i] * gs - suffix);
        suffix += w.weights[i] * gs;
    }
}

/// Reverse pass of the weight vector itself: adds `Σⱼ gⱼ ∂wⱼ/∂σᵢ` into
/// `d_sigma`, using `∂wᵢ/∂σᵢ = δᵢ T_{i+1}` and `∂wⱼ/∂σᵢ = -δᵢ wⱼ` for `j > i`.
pub fn weights_sigma_vjp(delta: &[f64], w: &Weights, g: &[f64], d_sigma: &mut [f64]) {
    let mut suffix = 0.0;
    for i in (0..w.weights.len()).rev() {
        d_sigma[i] += delta[i] * (g[i] * w.transmittance_after[i] - suffix);
        suffix += g[i] * w.weights[i];
    }
}
