use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EncodingConfig;
use crate::error::{Error, Result};

/// Layer sizes of the two-stage network.
///
/// The positional trunk is `trunk_depth` ReLU layers of `trunk_width` units
/// with the encoded position re-injected at `skip_layer`. It feeds a density
/// head and a linear feature layer. The spectro-directional head concatenates
/// that feature with the encoded direction and wavelength and maps it through
/// one ReLU layer of `head_width` units to four raw outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub trunk_depth: usize,
    pub trunk_width: usize,
    pub skip_layer: Option<usize>,
    pub head_width: usize,
}

impl Default for FieldArch {
    fn default() -> Self {
        FieldArch {
            trunk_depth: 8,
            trunk_width: 256,
            skip_layer: Some(4),
            head_width: 128,
        }
    }
}

impl FieldArch {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_depth == 0 || self.trunk_width == 0 || self.head_width == 0 {
            return Err(Error::InvalidInput(format!(
                "network dimensions must be positive: {self:?}"
            )));
        }
        if let Some(skip) = self.skip_layer {
            if skip == 0 || skip >= self.trunk_depth {
                return Err(Error::InvalidInput(format!(
                    "skip layer {skip} must lie in 1..{}",
                    self.trunk_depth
                )));
            }
        }
        Ok(())
    }

    /// `(inputs, outputs)` of every layer, in storage order.
    pub fn layer_shapes(&self, enc: &EncodingConfig) -> Vec<(usize, usize)> {
        let pe = enc.position_width();
        let w = self.trunk_width;
        let mut shapes = Vec::with_capacity(self.trunk_depth + 4);
        for l in 0..self.trunk_depth {
            let fan_in = if l == 0 {
                pe
            } else if Some(l) == self.skip_layer {
                w + pe
            } else {
                w
            };
            shapes.push((fan_in, w));
        }
        shapes.push((w, 1));
        shapes.push((w, w));
        shapes.push((w + enc.direction_width() + enc.wavelength_width(), self.head_width));
        shapes.push((self.head_width, 4));
        shapes
    }

    pub fn sigma_layer(&self) -> usize {
        self.trunk_depth
    }

    pub fn feature_layer(&self) -> usize {
        self.trunk_depth + 1
    }

    pub fn head_hidden_layer(&self) -> usize {
        self.trunk_depth + 2
    }

    pub fn head_out_layer(&self) -> usize {
        self.trunk_depth + 3
    }
}

/// A fully connected layer: `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All learnable weights of the field network.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub arch: FieldArch,
    pub layers: Vec<Dense>,
}

impl FieldParams {
    pub fn zeros(arch: FieldArch, enc: &EncodingConfig) -> Self {
        let layers = arch
            .layer_shapes(enc)
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        FieldParams { arch, layers }
    }

    pub fn zeros_like(&self) -> Self {
        FieldParams {
            arch: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// Checks that the layer shapes match `arch` under `enc`.
    pub fn check_shapes(&self, enc: &EncodingConfig) -> Result<()> {
        let want = self.arch.layer_shapes(enc);
        if want.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                want.len(),
                self.layers.len()
            )));
        }
        for (i, ((fi, fo), layer)) in want.iter().zip(&self.layers).enumerate() {
            if layer.fan_in() != *fi || layer.fan_out() != *fo || layer.bias.len() != *fo {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {fo}x{fi}, found {}x{}",
                    layer.fan_out(),
                    layer.fan_in()
                )));
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {i}")));
            }
        }
        Ok(())
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, found {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Mutable slices over every tensor, in storage order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &FieldParams, k: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(k, &b.weight);
            a.bias.scaled_add(k, &b.bias);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
    }
}

/// Scale applied to the initial weights of the final Stokes layer so that the
/// untrained network emits `s0 ≈ 0.5`, `ρ ≈ 0.5`.
pub const STOKES_HEAD_INIT_SCALE: f64 = 1e-2;

/// Seeded He-uniform initialization: weights `U(±sqrt(6 / fan_in))`, zero
/// biases, and a damped final Stokes layer.
pub fn init_params(arch: FieldArch, enc: &EncodingConfig, seed: u64) -> Result<FieldParams> {
    arch.validate()?;
    enc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = FieldParams::zeros(arch, enc);
    let out_layer = arch.head_out_layer();
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let mut bound = (6.0 / layer.fan_in() as f64).sqrt();
        if i == out_layer {
            bound *= STOKES_HEAD_INIT_SCALE;
        }
        for w in layer.weight.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}
