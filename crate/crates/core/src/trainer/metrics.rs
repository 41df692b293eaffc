use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{MultiViewDataset, Split, StokesCube};
use crate::error::{Error, Result};
use crate::field::NeuralField;
use crate::polcore::StokesVector;
use crate::renderer::{render_image, RenderConfig};

/// PSNR reported when the error is zero or the value would exceed it.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `20·log10(range / rmse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(rmse: f64, range: f64) -> f64 {
    if rmse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * (range / rmse).log10()).min(PSNR_CAP_DB)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetric {
    pub wavelength_nm: f64,
    pub element: usize,
    pub rmse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub rmse: f64,
    pub psnr: f64,
}

/// Per-pixel polarization errors of one view at one wavelength. Pixels
/// where a quantity is undefined in either cube hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub view: String,
    pub wavelength_nm: f64,
    pub height: usize,
    pub width: usize,
    /// `|DoP_rendered − DoP_reference|`
    pub dop: Vec<f64>,
    /// Distance between AoLPs on the half-turn circle, in `[0, π/2]`.
    pub aolp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Dynamic range of the reference `s0`, the PSNR peak value for every
    /// element.
    pub range: f64,
    pub wavelengths: Vec<f64>,
    /// One entry per (wavelength, element), wavelength-major.
    pub channels: Vec<ChannelMetric>,
    pub elements: [Score; 4],
    pub aggregate: Score,
    pub error_maps: Vec<ErrorMap>,
}

impl Metrics {
    pub fn channel(&self, wavelength_nm: f64, element: usize) -> Option<&ChannelMetric> {
        self.channels
            .iter()
            .find(|c| c.wavelength_nm == wavelength_nm && c.element == element)
    }

    pub fn mean_dop_error(&self) -> f64 {
        nan_mean(self.error_maps.iter().flat_map(|m| m.dop.iter()))
    }

    pub fn mean_aolp_error(&self) -> f64 {
        nan_mean(self.error_maps.iter().flat_map(|m| m.aolp.iter()))
    }

    /// CSV with one row per (wavelength, element).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.channels {
            w.serialize(c)
                .map_err(|e| Error::InvalidInput(format!("metrics csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("metrics csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Plain-text PSNR/RMSE table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "PSNR [dB] / RMSE   (peak = s0 range {:.4})", self.range);
        let _ = write!(out, "{:>8}", "nm");
        for e in 0..4 {
            let _ = write!(out, "  {:>17}", format!("s{e}"));
        }
        out.push('\n');
        for (l, wl) in self.wavelengths.iter().enumerate() {
            let _ = write!(out, "{wl:>8.1}");
            for c in &self.channels[4 * l..4 * l + 4] {
                let _ = write!(out, "  {:>7.2} / {:<7.5}", c.psnr, c.rmse);
            }
            out.push('\n');
        }
        let _ = write!(out, "{:>8}", "all");
        for s in &self.elements {
            let _ = write!(out, "  {:>7.2} / {:<7.5}", s.psnr, s.rmse);
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "aggregate PSNR {:.2} dB, RMSE {:.5}; mean |ΔDoP| {:.4}, mean |ΔAoLP| {:.4} rad",
            self.aggregate.psnr,
            self.aggregate.rmse,
            self.mean_dop_error(),
            self.mean_aolp_error()
        );
        out
    }
}

fn nan_mean<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.filter(|v| !v.is_nan()) {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn dop(s: &StokesVector) -> Option<f64> {
    (s.s0() > 0.0).then(|| s.polarized_intensity() / s.s0())
}

fn aolp(s: &StokesVector) -> Option<f64> {
    (s.s1() != 0.0 || s.s2() != 0.0).then(|| 0.5 * s.s2().atan2(s.s1()))
}

fn error_map(view: &str, rendered: &StokesCube, reference: &StokesCube, l: usize) -> ErrorMap {
    let n = reference.num_pixels();
    let mut dop_err = Vec::with_capacity(n);
    let mut aolp_err = Vec::with_capacity(n);
    for p in 0..n {
        let a = rendered.pixel(p, l);
        let b = reference.pixel(p, l);
        dop_err.push(match (dop(&a), dop(&b)) {
            (Some(x), Some(y)) => (x - y).abs(),
            _ => f64::NAN,
        });
        aolp_err.push(match (aolp(&a), aolp(&b)) {
            (Some(x), Some(y)) => {
                let d = (x - y).rem_euclid(PI);
                d.min(PI - d)
            }
            _ => f64::NAN,
        });
    }
    ErrorMap {
        view: view.to_string(),
        wavelength_nm: reference.wavelengths[l],
        height: reference.height,
        width: reference.width,
        dop: dop_err,
        aolp: aolp_err,
    }
}

/// Compares rendered cubes against references, given as
/// `(view id, rendered, reference)` triples sharing one wavelength list.
pub fn evaluate_cubes(pairs: &[(&str, &StokesCube, &StokesCube)]) -> Result<Metrics> {
    let Some((_, _, first)) = pairs.first() else {
        return Err(Error::InvalidInput("no views to evaluate".into()));
    };
    let wavelengths = first.wavelengths.clone();
    let nl = wavelengths.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (id, r, m) in pairs {
        if !r.same_shape(m) || m.wavelengths != wavelengths {
            return Err(Error::Dimension(format!(
                "view `{id}`: rendered and reference cubes differ in shape or wavelengths"
            )));
        }
        if !r.is_finite() || !m.is_finite() {
            return Err(Error::NonFinite(format!("cubes of view `{id}`")));
        }
        for px in m.data.chunks_exact(4) {
            lo = lo.min(px[0]);
            hi = hi.max(px[0]);
        }
    }
    let mut range = hi - lo;
    if !(range > 0.0) {
        range = hi.abs().max(1.0);
    }

    let mut sq = vec![0.0; nl * 4];
    let mut count = 0usize;
    let mut error_maps = Vec::with_capacity(pairs.len() * nl);
    for (id, r, m) in pairs {
        count += m.num_pixels();
        for (i, (a, b)) in r.data.iter().zip(&m.data).enumerate() {
            sq[i % (4 * nl)] += (a - b) * (a - b);
        }
        for l in 0..nl {
            error_maps.push(error_map(id, r, m, l));
        }
    }
    let count = count as f64;
    let score = |sum: f64, n: f64| {
        let rmse = (sum / n).sqrt();
        Score {
            rmse,
            psnr: psnr(rmse, range),
        }
    };
    let channels = (0..nl * 4)
        .map(|k| {
            let s = score(sq[k], count);
            ChannelMetric {
                wavelength_nm: wavelengths[k / 4],
                element: k % 4,
                rmse: s.rmse,
                psnr: s.psnr,
            }
        })
        .collect();
    let elements = std::array::from_fn(|e| {
        score((0..nl).map(|l| sq[4 * l + e]).sum(), count * nl as f64)
    });
    let aggregate = score(sq.iter().sum(), count * (nl * 4) as f64);
    Ok(Metrics {
        range,
        wavelengths,
        channels,
        elements,
        aggregate,
        error_maps,
    })
}

/// A rendered view kept alongside its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub id: String,
    pub cube: StokesCube,
}

/// Renders every view of `split` and scores it against the measurements.
/// Sampling is clipped to the dataset bounds.
pub fn evaluate(
    field: &NeuralField,
    ds: &MultiViewDataset,
    split: Split,
    cfg: &RenderConfig,
) -> Result<(Metrics, Vec<RenderedView>)> {
    let cfg = RenderConfig {
        clip_to: Some(cfg.clip_to.unwrap_or(ds.bounds)),
        ..cfg.clone()
    };
    let mut rendered = Vec::new();
    for v in ds.split(split) {
        let img = render_image(field, &v.camera, &ds.wavelengths, &cfg)?;
        rendered.push(RenderedView {
            id: v.id.clone(),
            cube: img.cube,
        });
    }
    let pairs: Vec<_> = ds
        .split(split)
        .zip(&rendered)
        .map(|(v, r)| (v.id.as_str(), &r.cube, &v.cube))
        .collect();
    let metrics = evaluate_cubes(&pairs)?;
    Ok((metrics, rendered))
}
