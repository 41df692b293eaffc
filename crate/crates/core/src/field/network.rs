//! Batched forward and reverse passes of the field network.
//!
//! A batch is a set of points, each with its own view direction, evaluated at
//! a shared list of wavelengths. The positional trunk runs once per point and
//! only the small spectro-directional head is repeated per wavelength.

use nalgebra::Vector3;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{EncodingConfig, FieldParams};
use crate::error::{Error, Result};
use crate::polcore::StokesVector;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Maps raw head outputs `(X0, X1, X2, X3)` to a Stokes vector:
/// `s0 = S(X0)`, `ρ = S(X1)`, `χ = X2`, `ψ = X3`, then the Poincaré-sphere
/// construction.
#[inline]
pub fn stokes_from_raw(x: [f64; 4]) -> StokesVector {
    crate::polcore::stokes_from_poincare_unchecked(sigmoid(x[0]), sigmoid(x[1]), x[2], x[3])
}

/// Vector-Jacobian product of [`stokes_from_raw`].
#[inline]
fn stokes_from_raw_vjp(x: [f64; 4], g: [f64; 4]) -> [f64; 4] {
    let s0 = sigmoid(x[0]);
    let rho = sigmoid(x[1]);
    let (s2c, c2c) = (2.0 * x[2]).sin_cos();
    let (s2p, c2p) = (2.0 * x[3]).sin_cos();
    let u1 = rho * c2c * c2p;
    let u2 = rho * c2c * s2p;
    let u3 = rho * s2c;
    [
        (g[0] + g[1] * u1 + g[2] * u2 + g[3] * u3) * s0 * (1.0 - s0),
        s0 * (g[1] * c2c * c2p + g[2] * c2c * s2p + g[3] * s2c) * rho * (1.0 - rho),
        s0 * rho * (2.0 * g[3] * c2c - 2.0 * s2c * (g[1] * c2p + g[2] * s2p)),
        s0 * rho * c2c * 2.0 * (g[2] * c2p - g[1] * s2p),
    ]
}

/// `input · Wᵀ + b`
fn affine(input: ArrayView2<f64>, weight: ArrayView2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let mut out = input.dot(&weight.t());
    out += bias;
    out
}

fn relu_in_place(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn check_finite(a: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Intermediate values of one forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    enc: Array2<f64>,
    trunk_out: Vec<Array2<f64>>,
    sigma_pre: Array1<f64>,
    feat: Array2<f64>,
    dir_enc: Array2<f64>,
    wl_enc: Vec<Vec<f64>>,
    head_act: Vec<Array2<f64>>,
    /// Volume density per point.
    pub sigma: Array1<f64>,
    /// Raw head outputs `[n_points, 4]`, one array per wavelength.
    pub raw: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn num_wavelengths(&self) -> usize {
        self.raw.len()
    }

    pub fn stokes(&self, wavelength: usize, point: usize) -> StokesVector {
        let r = self.raw[wavelength].row(point);
        stokes_from_raw([r[0], r[1], r[2], r[3]])
    }

    pub fn raw_at(&self, wavelength: usize, point: usize) -> [f64; 4] {
        let r = self.raw[wavelength].row(point);
        [r[0], r[1], r[2], r[3]]
    }

    /// Which ReLU units are active, flattened. Two passes with the same
    /// pattern lie in the same linear region of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.trunk_out
            .iter()
            .chain(self.head_act.iter())
            .flat_map(|a| a.iter().map(|v| *v > 0.0))
            .collect()
    }
}

/// Runs the network on `positions.len()` points.
pub fn forward(
    params: &FieldParams,
    enc: &EncodingConfig,
    positions: &[Vector3<f64>],
    directions: &[Vector3<f64>],
    wavelengths: &[f64],
) -> Result<ForwardPass> {
    let n = positions.len();
    if directions.len() != n {
        return Err(Error::Shape(format!(
            "{} positions but {} directions",
            n,
            directions.len()
        )));
    }
    let arch = &params.arch;
    let pe = enc.position_width();
    let de = enc.direction_width();
    let w = arch.trunk_width;

    let mut pos_enc = Array2::zeros((n, pe));
    let mut dir_enc = Array2::zeros((n, de));
    for i in 0..n {
        enc.encode_position(&positions[i], pos_enc.row_mut(i).into_slice().unwrap());
        enc.encode_direction(&directions[i], dir_enc.row_mut(i).into_slice().unwrap());
    }

    let mut trunk_out: Vec<Array2<f64>> = Vec::with_capacity(arch.trunk_depth);
    for l in 0..arch.trunk_depth {
        let layer = &params.layers[l];
        let mut z = if l == 0 {
            affine(pos_enc.view(), layer.weight.view(), &layer.bias)
        } else if Some(l) == arch.skip_layer {
            let mut z = affine(
                trunk_out[l - 1].view(),
                layer.weight.slice(s![.., ..w]),
                &layer.bias,
            );
            z += &pos_enc.dot(&layer.weight.slice(s![.., w..]).t());
            z
        } else {
            affine(trunk_out[l - 1].view(), layer.weight.view(), &layer.bias)
        };
        relu_in_place(&mut z);
        check_finite(&z, || format!("trunk layer {l}"))?;
        trunk_out.push(z);
    }
    let hidden = trunk_out.last().expect("trunk_depth >= 1");

    let sig_layer = &params.layers[arch.sigma_layer()];
    let sigma_pre = affine(hidden.view(), sig_layer.weight.view(), &sig_layer.bias)
        .index_axis_move(Axis(1), 0);
    let sigma = sigma_pre.mapv(softplus);
    if !sigma.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("density layer".into()));
    }

    let feat_layer = &params.layers[arch.feature_layer()];
    let feat = affine(hidden.view(), feat_layer.weight.view(), &feat_layer.bias);
    check_finite(&feat, || "feature layer".into())?;

    let hh = &params.layers[arch.head_hidden_layer()];
    let mut base = affine(feat.view(), hh.weight.slice(s![.., ..w]), &hh.bias);
    base += &dir_enc.dot(&hh.weight.slice(s![.., w..w + de]).t());
    let w_wl = hh.weight.slice(s![.., w + de..]);

    let out = &params.layers[arch.head_out_layer()];
    let mut wl_enc = Vec::with_capacity(wavelengths.len());
    let mut head_act = Vec::with_capacity(wavelengths.len());
    let mut raw = Vec::with_capacity(wavelengths.len());
    for &lambda in wavelengths {
        let e = enc.encode_wavelength(lambda);
        let shift = w_wl.dot(&Array1::from(e.clone()));
        let mut act = &base + &shift;
        relu_in_place(&mut act);
        check_finite(&act, || format!("head hidden layer at {lambda} nm"))?;
        let x = affine(act.view(), out.weight.view(), &out.bias);
        check_finite(&x, || format!("head output layer at {lambda} nm"))?;
        wl_enc.push(e);
        head_act.push(act);
        raw.push(x);
    }

    Ok(ForwardPass {
        enc: pos_enc,
        trunk_out,
        sigma_pre,
        feat,
        dir_enc,
        wl_enc,
        head_act,
        sigma,
        raw,
    })
}

/// Accumulates into `grads` the gradient of `Σ dσᵢ·σᵢ + Σ ⟨dsₗᵢ, sₗᵢ⟩`, where
/// `d_stokes[l]` is `[n_points, 4]` for wavelength `l`.
pub fn backward(
    params: &FieldParams,
    fwd: &ForwardPass,
    d_sigma: &[f64],
    d_stokes: &[Array2<f64>],
    grads: &mut FieldParams,
) -> Result<()> {
    let n = fwd.len();
    if d_sigma.len() != n || d_stokes.len() != fwd.num_wavelengths() {
        return Err(Error::Shape(format!(
            "upstream gradients: {} densities / {} wavelengths for {} points / {} wavelengths",
            d_sigma.len(),
            d_stokes.len(),
            n,
            fwd.num_wavelengths()
        )));
    }
    let arch = &params.arch;
    let w = arch.trunk_width;
    let de = fwd.dir_enc.ncols();
    let hh_idx = arch.head_hidden_layer();
    let out_idx = arch.head_out_layer();

    let mut dz_head_total = Array2::<f64>::zeros((n, arch.head_width));
    for (l, ds) in d_stokes.iter().enumerate() {
        if ds.dim() != (n, 4) {
            return Err(Error::Shape(format!(
                "Stokes gradient for wavelength {l} has shape {:?}",
                ds.dim()
            )));
        }
        let mut dx = Array2::<f64>::zeros((n, 4));
        for i in 0..n {
            let g = [ds[[i, 0]], ds[[i, 1]], ds[[i, 2]], ds[[i, 3]]];
            let v = stokes_from_raw_vjp(fwd.raw_at(l, i), g);
            dx.row_mut(i).assign(&ndarray::aview1(&v));
        }
        let act = &fwd.head_act[l];
        {
            let g = &mut grads.layers[out_idx];
            g.weight += &dx.t().dot(act);
            g.bias += &dx.sum_axis(Axis(0));
        }
        let mut dz = dx.dot(&params.layers[out_idx].weight);
        dz.zip_mut_with(act, |d, a| {
            if *a <= 0.0 {
                *d = 0.0;
            }
        });
        let col = dz.sum_axis(Axis(0));
        let g = &mut grads.layers[hh_idx];
        g.bias += &col;
        let e = &fwd.wl_enc[l];
        let mut gw = g.weight.slice_mut(s![.., w + de..]);
        for (r, c) in col.iter().enumerate() {
            for (k, ek) in e.iter().enumerate() {
                gw[[r, k]] += c * ek;
            }
        }
        dz_head_total += &dz;
    }
    {
        let g = &mut grads.layers[hh_idx];
        let mut gf = g.weight.slice_mut(s![.., ..w]);
        gf += &dz_head_total.t().dot(&fwd.feat);
        let mut gd = g.weight.slice_mut(s![.., w..w + de]);
        gd += &dz_head_total.t().dot(&fwd.dir_enc);
    }
    let d_feat = dz_head_total.dot(&params.layers[hh_idx].weight.slice(s![.., ..w]));

    let hidden = fwd.trunk_out.last().expect("trunk_depth >= 1");
    let feat_idx = arch.feature_layer();
    {
        let g = &mut grads.layers[feat_idx];
        g.weight += &d_feat.t().dot(hidden);
        g.bias += &d_feat.sum_axis(Axis(0));
    }
    let mut dh = d_feat.dot(&params.layers[feat_idx].weight);

    let sig_idx = arch.sigma_layer();
    let d_pre: Array1<f64> = fwd
        .sigma_pre
        .iter()
        .zip(d_sigma)
        .map(|(p, d)| d * sigmoid(*p))
        .collect();
    {
        let g = &mut grads.layers[sig_idx];
        let mut row = g.weight.row_mut(0);
        row += &d_pre.dot(hidden);
        g.bias[0] += d_pre.sum();
    }
    let w_sigma = params.layers[sig_idx].weight.row(0);
    for i in 0..n {
        let mut r = dh.row_mut(i);
        r.scaled_add(d_pre[i], &w_sigma);
    }

    for l in (0..arch.trunk_depth).rev() {
        let out = &fwd.trunk_out[l];
        dh.zip_mut_with(out, |d, a| {
            if *a <= 0.0 {
                *d = 0.0;
            }
        });
        let dz = dh;
        let layer = &params.layers[l];
        let g = &mut grads.layers[l];
        g.bias += &dz.sum_axis(Axis(0));
        if l == 0 {
            g.weight += &dz.t().dot(&fwd.enc);
            break;
        }
        let prev = &fwd.trunk_out[l - 1];
        if Some(l) == arch.skip_layer {
            let mut gh = g.weight.slice_mut(s![.., ..w]);
            gh += &dz.t().dot(prev);
            let mut ge = g.weight.slice_mut(s![.., w..]);
            ge += &dz.t().dot(&fwd.enc);
            dh = dz.dot(&layer.weight.slice(s![.., ..w]));
        } else {
            g.weight += &dz.t().dot(prev);
            dh = dz.dot(&layer.weight);
        }
    }
    Ok(())
}
