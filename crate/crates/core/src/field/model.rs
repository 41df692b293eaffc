use std::collections::BTreeMap;

use nalgebra::Vector3;
use ndarray::Array2;

use super::network::{backward, forward};
use super::{init_params, EncodingConfig, FieldArch, FieldParams};
use crate::error::{Error, Result};
use crate::polcore::{build_frame_unchecked, sph2cart, Frame, StokesVector};
use crate::renderer::{FieldSamples, StokesField};

/// Density and Stokes vector emitted at one point, in the per-ray output
/// frame `z = -d`, `(x, y) = build_frame(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub stokes: StokesVector,
    /// Raw head outputs `X0..X3` before the activation mapping.
    pub raw: [f64; 4],
    pub frame: Frame,
}

/// One query of [`NeuralField::eval_field_with_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldQuery {
    pub position: Vector3<f64>,
    /// Polar angle and azimuth of the propagation direction.
    pub theta: f64,
    pub phi: f64,
    pub wavelength_nm: f64,
}

/// Upstream gradient for one query: `∂L/∂σ` and `∂L/∂s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGradient {
    pub sigma: f64,
    pub stokes: [f64; 4],
}

/// A parameterized spectro-polarimetric field.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    pub params: FieldParams,
    pub encoding: EncodingConfig,
}

impl NeuralField {
    pub fn new(params: FieldParams, encoding: EncodingConfig) -> Result<Self> {
        encoding.validate()?;
        params.arch.validate()?;
        params.check_shapes(&encoding)?;
        Ok(NeuralField { params, encoding })
    }

    pub fn initialized(arch: FieldArch, encoding: EncodingConfig, seed: u64) -> Result<Self> {
        let params = init_params(arch, &encoding, seed)?;
        NeuralField::new(params, encoding)
    }

    fn check_inputs(&self, wavelengths: &[f64]) -> Result<()> {
        for &l in wavelengths {
            self.encoding.check_wavelength(l)?;
        }
        self.params.check_finite()
    }

    /// Evaluates the field at a single position, direction `(θ, φ)` and
    /// wavelength.
    pub fn eval_field(
        &self,
        position: &Vector3<f64>,
        theta: f64,
        phi: f64,
        wavelength_nm: f64,
    ) -> Result<FieldOutput> {
        self.check_inputs(&[wavelength_nm])?;
        let d = sph2cart(theta, phi);
        let fwd = forward(
            &self.params,
            &self.encoding,
            std::slice::from_ref(position),
            std::slice::from_ref(&d),
            &[wavelength_nm],
        )?;
        Ok(FieldOutput {
            sigma: fwd.sigma[0],
            stokes: fwd.stokes(0, 0),
            raw: fwd.raw_at(0, 0),
            frame: build_frame_unchecked(&-d),
        })
    }

    /// Gradient of `Σ_q ⟨upstream_q, (σ_q, s_q)⟩` with respect to every
    /// parameter, by reverse-mode differentiation.
    pub fn eval_field_with_gradients(
        &self,
        queries: &[FieldQuery],
        upstream: &[OutputGradient],
    ) -> Result<FieldParams> {
        if queries.is_empty() {
            return Err(Error::InvalidInput("empty query batch".into()));
        }
        if queries.len() != upstream.len() {
            return Err(Error::Shape(format!(
                "{} queries but {} upstream gradients",
                queries.len(),
                upstream.len()
            )));
        }
        let lambdas: Vec<f64> = queries.iter().map(|q| q.wavelength_nm).collect();
        self.check_inputs(&lambdas)?;

        // the batched pass shares wavelengths across points, so group queries
        // by wavelength
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, q) in queries.iter().enumerate() {
            groups.entry(q.wavelength_nm.to_bits()).or_default().push(i);
        }
        let mut grads = self.params.zeros_like();
        for (bits, idx) in groups {
            let positions: Vec<_> = idx.iter().map(|&i| queries[i].position).collect();
            let dirs: Vec<_> = idx
                .iter()
                .map(|&i| sph2cart(queries[i].theta, queries[i].phi))
                .collect();
            let fwd = forward(
                &self.params,
                &self.encoding,
                &positions,
                &dirs,
                &[f64::from_bits(bits)],
            )?;
            let d_sigma: Vec<f64> = idx.iter().map(|&i| upstream[i].sigma).collect();
            let mut ds = Array2::zeros((idx.len(), 4));
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..4 {
                    ds[[r, c]] = upstream[i].stokes[c];
                }
            }
            backward(&self.params, &fwd, &d_sigma, &[ds], &mut grads)?;
        }
        Ok(grads)
    }
}

impl StokesField for NeuralField {
    fn eval_points(
        &self,
        positions: &[Vector3<f64>],
        directions: &[Vector3<f64>],
        wavelengths: &[f64],
    ) -> Result<FieldSamples> {
        self.check_inputs(wavelengths)?;
        let fwd = forward(&self.params, &self.encoding, positions, directions, wavelengths)?;
        let n = positions.len();
        let mut stokes = Vec::with_capacity(n * wavelengths.len());
        for l in 0..wavelengths.len() {
            for i in 0..n {
                stokes.push(fwd.stokes(l, i));
            }
        }
        Ok(FieldSamples {
            sigma: fwd.sigma.to_vec(),
            stokes,
        })
    }
}
