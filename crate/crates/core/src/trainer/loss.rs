use serde::{Deserialize, Serialize};

use crate::dataio::{MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::polcore::StokesVector;

/// Per-element loss weights `w_i = std(s0) / std(s_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub [f64; 4]);

impl LossWeights {
    pub const UNIFORM: LossWeights = LossWeights([1.0; 4]);

    /// Weights from the population standard deviation of each element.
    pub fn from_std(std: [f64; 4]) -> Result<Self> {
        for (c, s) in std.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(Error::DegenerateDataset { channel: c });
            }
        }
        Ok(LossWeights([1.0, std[0] / std[1], std[0] / std[2], std[0] / std[3]]))
    }
}

/// Population standard deviation of each element over flat `[.., 4]` data.
pub fn element_std<'a>(chunks: impl Iterator<Item = &'a [f64]>) -> [f64; 4] {
    let mut n = 0usize;
    let mut mean = [0.0; 4];
    let mut m2 = [0.0; 4];
    for s in chunks {
        n += 1;
        for c in 0..4 {
            let d = s[c] - mean[c];
            mean[c] += d / n as f64;
            m2[c] += d * (s[c] - mean[c]);
        }
    }
    m2.map(|v| if n > 0 { (v / n as f64).sqrt() } else { 0.0 })
}

/// Weights over every measured Stokes entry of the training split.
pub fn compute_loss_weights(ds: &MultiViewDataset) -> Result<LossWeights> {
    if ds.split(Split::Train).all(|v| v.cube.data.is_empty()) {
        return Err(Error::InvalidInput("no training measurements".into()));
    }
    let chunks = ds
        .split(Split::Train)
        .flat_map(|v| v.cube.data.chunks_exact(4));
    LossWeights::from_std(element_std(chunks))
}

/// Per-element weighted squared errors, `w_i·(meas_i - rend_i)²` summed over
/// the batch.
pub fn stokes_loss_terms(
    rendered: &[StokesVector],
    measured: &[StokesVector],
    w: &LossWeights,
) -> Result<[f64; 4]> {
    if rendered.len() != measured.len() {
        return Err(Error::Shape(format!(
            "{} rendered vs {} measured Stokes vectors",
            rendered.len(),
            measured.len()
        )));
    }
    let mut t = [0.0; 4];
    for (r, m) in rendered.iter().zip(measured) {
        for c in 0..4 {
            let e = m[c] - r[c];
            t[c] += w.0[c] * e * e;
        }
    }
    Ok(t)
}

/// `Σ_rays Σ_λ Σ_i w_i·([s_meas]_i - [s_rend]_i)²`, with rays and
/// wavelengths flattened into the slices.
pub fn stokes_loss(rendered: &[StokesVector], measured: &[StokesVector], w: &LossWeights) -> Result<f64> {
    Ok(stokes_loss_terms(rendered, measured, w)?.iter().sum())
}

/// Variance of one ray's normalized weight distribution `p = w / Σw`, and
/// its gradient with respect to the unnormalized weights. Rays with no
/// weight mass contribute zero.
pub fn ray_weight_variance(weights: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    if n == 0 || !(total > 0.0) {
        if let Some(g) = grad {
            g.fill(0.0);
        }
        return 0.0;
    }
    let nf = n as f64;
    let mean = 1.0 / nf;
    let var = weights
        .iter()
        .map(|w| (w / total - mean).powi(2))
        .sum::<f64>()
        / nf;
    if let Some(g) = grad {
        // dV/dp_i = (2/N)(p_i - 1/N); dp_i/dw_j = (δ_ij - p_i)/S
        let dp: Vec<f64> = weights.iter().map(|w| 2.0 / nf * (w / total - mean)).collect();
        let proj: f64 = weights.iter().zip(&dp).map(|(w, d)| w / total * d).sum();
        for (gi, d) in g.iter_mut().zip(&dp) {
            *gi = (d - proj) / total;
        }
    }
    var
}

/// Mean over rays of [`ray_weight_variance`].
pub fn weight_variance_regularizer(rays: &[Vec<f64>]) -> f64 {
    if rays.is_empty() {
        return 0.0;
    }
    rays.iter().map(|w| ray_weight_variance(w, None)).sum::<f64>() / rays.len() as f64
}
