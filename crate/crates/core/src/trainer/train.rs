use std::ops::Range;

use log::info;
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{compute_loss_weights, ray_weight_variance, LossWeights};
use super::optim::{Adam, AdamConfig};
use crate::dataio::{MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::field::network::{backward, forward};
use crate::field::{FieldParams, NeuralField};
use crate::polcore::StokesVector;
use crate::renderer::quadrature::{
    composite, composite_sigma_vjp, quadrature_weights, sample_bins, weights_sigma_vjp,
};
use crate::renderer::{generate_ray, FrameConvention, Ray, RaySamples};

/// How the per-element loss weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// `w_i = std(s0) / std(s_i)` over the training split.
    Adaptive,
    /// `w_i = 1`.
    Uniform,
    Fixed(LossWeights),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Rays per batch.
    pub batch_rays: usize,
    /// Random subset of wavelengths rendered per batch; `None` uses all.
    pub wavelengths_per_batch: Option<usize>,
    pub learning_rate: f64,
    /// The learning rate decays exponentially to `learning_rate · lr_decay`
    /// at the last step.
    pub lr_decay: f64,
    /// Coefficient of the weight-variance regularizer.
    pub reg_weight: f64,
    pub seed: u64,
    pub samples_per_ray: usize,
    pub stratified: bool,
    pub background: StokesVector,
    pub loss_weighting: LossWeighting,
    pub adam: AdamConfig,
    /// Log progress every this many steps; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_rays: 1024,
            wavelengths_per_batch: Some(5),
            learning_rate: 5e-4,
            lr_decay: 0.1,
            reg_weight: 0.01,
            seed: 0,
            samples_per_ray: 64,
            stratified: true,
            background: StokesVector::ZERO,
            loss_weighting: LossWeighting::Adaptive,
            adam: AdamConfig::default(),
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rays == 0 || self.samples_per_ray == 0 {
            return Err(Error::InvalidInput("batch and sample counts must be positive".into()));
        }
        if self.wavelengths_per_batch == Some(0) {
            return Err(Error::InvalidInput("wavelengths_per_batch must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::InvalidInput("learning rate and decay must be positive".into()));
        }
        if !(self.reg_weight >= 0.0) {
            return Err(Error::InvalidInput("reg_weight must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let frac = if self.steps > 0 {
            step as f64 / self.steps as f64
        } else {
            0.0
        };
        self.learning_rate * self.lr_decay.powf(frac)
    }
}

/// A batch of rays with their samples and measured Stokes vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub samples: Vec<RaySamples>,
    pub wavelengths: Vec<f64>,
    /// Measured Stokes vector of ray `r` at wavelength `l`, index `r·Λ + l`.
    pub targets: Vec<StokesVector>,
}

impl RayBatch {
    fn validate(&self) -> Result<()> {
        if self.rays.is_empty() || self.wavelengths.is_empty() {
            return Err(Error::InvalidInput("empty ray batch".into()));
        }
        if self.samples.len() != self.rays.len()
            || self.targets.len() != self.rays.len() * self.wavelengths.len()
        {
            return Err(Error::Shape(format!(
                "batch of {} rays has {} sample sets and {} targets",
                self.rays.len(),
                self.samples.len(),
                self.targets.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub loss_weights: LossWeights,
    pub reg_weight: f64,
    pub background: StokesVector,
}

/// Value and parameter gradient of the training objective
/// `mean_{r,λ} Σ_i w_i e_i² + reg_weight · mean_r Var(p_r)`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    /// Weighted squared error per Stokes element, averaged over rays and
    /// wavelengths.
    pub terms: [f64; 4],
    pub regularizer: f64,
    pub grads: FieldParams,
}

/// Rays per forward/backward pass.
const RAY_CHUNK: usize = 64;

struct Partial {
    terms: [f64; 4],
    reg: f64,
    grads: FieldParams,
}

fn chunk_objective(
    field: &NeuralField,
    batch: &RayBatch,
    range: Range<usize>,
    cfg: &ObjectiveConfig,
) -> Result<Partial> {
    let nl = batch.wavelengths.len();
    let loss_scale = 1.0 / (batch.rays.len() * nl) as f64;
    let reg_scale = 1.0 / batch.rays.len() as f64;
    let w = &cfg.loss_weights.0;

    let mut positions = Vec::new();
    let mut directions: Vec<Vector3<f64>> = Vec::new();
    let mut offsets = Vec::with_capacity(range.len());
    for r in range.clone() {
        offsets.push(positions.len());
        let ray = &batch.rays[r];
        for t in &batch.samples[r].t {
            positions.push(ray.at(*t));
            directions.push(ray.direction);
        }
    }
    let mut grads = field.params.zeros_like();
    let mut terms = [0.0; 4];
    let mut reg = 0.0;
    if positions.is_empty() {
        return Ok(Partial { terms, reg, grads });
    }
    let fwd = forward(
        &field.params,
        &field.encoding,
        &positions,
        &directions,
        &batch.wavelengths,
    )?;
    let n = positions.len();
    let mut d_sigma = vec![0.0; n];
    let mut d_stokes = vec![Array2::<f64>::zeros((n, 4)); nl];
    let mut gw = Vec::new();

    for (k, r) in range.enumerate() {
        let o = offsets[k];
        let delta = &batch.samples[r].delta;
        let m = delta.len();
        let sig = &fwd.sigma.as_slice().expect("contiguous")[o..o + m];
        let qw = quadrature_weights(sig, delta);
        for l in 0..nl {
            let stokes = |i: usize| fwd.stokes(l, o + i);
            let rendered = composite(&qw, stokes, &cfg.background);
            let meas = &batch.targets[r * nl + l];
            let mut g = [0.0; 4];
            for c in 0..4 {
                let e = meas[c] - rendered[c];
                terms[c] += loss_scale * w[c] * e * e;
                g[c] = -2.0 * loss_scale * w[c] * e;
            }
            let ds = &mut d_stokes[l];
            for (i, wi) in qw.weights.iter().enumerate() {
                for c in 0..4 {
                    ds[[o + i, c]] += wi * g[c];
                }
            }
            composite_sigma_vjp(delta, &qw, stokes, &cfg.background, &g, &mut d_sigma[o..o + m]);
        }
        if cfg.reg_weight > 0.0 {
            gw.resize(m, 0.0);
            reg += reg_scale * ray_weight_variance(&qw.weights, Some(&mut gw));
            for v in gw.iter_mut() {
                *v *= cfg.reg_weight * reg_scale;
            }
            weights_sigma_vjp(delta, &qw, &gw, &mut d_sigma[o..o + m]);
        }
    }
    backward(&field.params, &fwd, &d_sigma, &d_stokes, &mut grads)?;
    Ok(Partial { terms, reg, grads })
}

/// Evaluates the objective and its exact gradient on `batch`. Work is split
/// into fixed chunks whose results are summed in chunk order, so the output
/// does not depend on the thread count.
pub fn objective_and_gradient(
    field: &NeuralField,
    batch: &RayBatch,
    cfg: &ObjectiveConfig,
) -> Result<Objective> {
    batch.validate()?;
    for &l in &batch.wavelengths {
        field.encoding.check_wavelength(l)?;
    }
    let nr = batch.rays.len();
    let parts = (0..nr.div_ceil(RAY_CHUNK))
        .into_par_iter()
        .map(|c| chunk_objective(field, batch, c * RAY_CHUNK..((c + 1) * RAY_CHUNK).min(nr), cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("at least one chunk");
    for p in iter {
        for c in 0..4 {
            acc.terms[c] += p.terms[c];
        }
        acc.reg += p.reg;
        acc.grads.add_scaled(&p.grads, 1.0);
    }
    Ok(Objective {
        total: acc.terms.iter().sum::<f64>() + cfg.reg_weight * acc.reg,
        terms: acc.terms,
        regularizer: acc.reg,
        grads: acc.grads,
    })
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub regularizer: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: NeuralField,
    pub trace: Vec<TraceRow>,
    pub loss_weights: LossWeights,
}

/// Training rays of a dataset: every pixel of every training view whose
/// ray crosses the scene bounds, clipped to them.
struct RayPool {
    rays: Vec<Ray>,
    /// `Λ` targets per ray.
    targets: Vec<StokesVector>,
}

fn ray_pool(ds: &MultiViewDataset) -> Result<RayPool> {
    let nl = ds.wavelengths.len();
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for v in ds.split(Split::Train) {
        let cam = &v.camera;
        for p in 0..cam.num_pixels() {
            let ray = generate_ray(cam, p / cam.width, p % cam.width)?;
            if let Some(r) = ray.clipped_to(&ds.bounds) {
                rays.push(r);
                targets.extend((0..nl).map(|l| v.cube.pixel(p, l)));
            }
        }
    }
    Ok(RayPool { rays, targets })
}

/// Fits `field` to the training views of `ds`.
pub fn train(ds: &MultiViewDataset, cfg: &TrainConfig, field: NeuralField) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    if ds.frame_convention != FrameConvention::Canonical {
        return Err(Error::FrameMismatch(
            "training needs cubes in the canonical frame; convert camera-local data first".into(),
        ));
    }
    for &l in &ds.wavelengths {
        field.encoding.check_wavelength(l)?;
    }
    let loss_weights = match cfg.loss_weighting {
        LossWeighting::Adaptive => compute_loss_weights(ds)?,
        LossWeighting::Uniform => LossWeights::UNIFORM,
        LossWeighting::Fixed(w) => w,
    };
    let pool = ray_pool(ds)?;
    if pool.rays.is_empty() {
        return Err(Error::InvalidInput("no training ray crosses the scene bounds".into()));
    }
    let nl = ds.wavelengths.len();
    let m = cfg.wavelengths_per_batch.unwrap_or(nl).min(nl);
    let obj_cfg = ObjectiveConfig {
        loss_weights,
        reg_weight: cfg.reg_weight,
        background: cfg.background,
    };

    let mut field = field;
    let mut opt = Adam::new(&field.params, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut wl_idx: Vec<usize> = if m < nl {
            rand::seq::index::sample(&mut rng, nl, m).into_vec()
        } else {
            (0..nl).collect()
        };
        wl_idx.sort_unstable();
        let mut batch = RayBatch {
            rays: Vec::with_capacity(cfg.batch_rays),
            samples: Vec::with_capacity(cfg.batch_rays),
            wavelengths: wl_idx.iter().map(|&l| ds.wavelengths[l]).collect(),
            targets: Vec::with_capacity(cfg.batch_rays * m),
        };
        for _ in 0..cfg.batch_rays {
            let r = rng.random_range(0..pool.rays.len());
            let ray = pool.rays[r];
            batch.samples.push(sample_bins(
                ray.near,
                ray.far,
                cfg.samples_per_ray,
                cfg.stratified,
                &mut rng,
            ));
            batch.rays.push(ray);
            batch.targets.extend(wl_idx.iter().map(|&l| pool.targets[r * nl + l]));
        }
        let obj = objective_and_gradient(&field, &batch, &obj_cfg).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFiniteLoss { step },
            e => e,
        })?;
        if !obj.total.is_finite() || obj.grads.check_finite().is_err() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = cfg.learning_rate_at(step);
        opt.step(&mut field.params, &obj.grads, lr);
        let row = TraceRow {
            step,
            total: obj.total,
            s0: obj.terms[0],
            s1: obj.terms[1],
            s2: obj.terms[2],
            s3: obj.terms[3],
            regularizer: obj.regularizer,
            learning_rate: lr,
        };
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            info!(
                "step {step:>6}  loss {:.6e}  reg {:.4e}  lr {lr:.2e}",
                row.total, row.regularizer
            );
        }
        trace.push(row);
    }
    Ok(TrainOutcome {
        field,
        trace,
        loss_weights,
    })
}

/// Loss trace as CSV text.
pub fn trace_to_csv(trace: &[TraceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in trace {
        w.serialize(row)
            .map_err(|e| Error::InvalidInput(format!("loss trace: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("loss trace: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{StokesCube, View};
    use crate::field::{EncodingConfig, FieldArch};
    use crate::renderer::{Aabb, Camera};

    fn small_field(seed: u64) -> NeuralField {
        let arch = FieldArch {
            trunk_depth: 2,
            trunk_width: 16,
            skip_layer: Some(1),
            head_width: 8,
        };
        let enc = EncodingConfig {
            k_position: 2,
            k_direction: 1,
            ..EncodingConfig::default()
        };
        NeuralField::initialized(arch, enc, seed).unwrap()
    }

    fn constant_dataset(s: StokesVector) -> MultiViewDataset {
        let cam = Camera::look_at(
            Vector3::new(0.0, -3.0, 0.5),
            Vector3::zeros(),
            Vector3::z(),
            0.5,
            8,
            8,
        )
        .unwrap();
        let wl = vec![500.0, 600.0];
        let mut cube = StokesCube::zeros(8, 8, wl.clone());
        for p in 0..64 {
            for l in 0..2 {
                cube.set(p / 8, p % 8, l, s);
            }
        }
        MultiViewDataset {
            wavelengths: wl,
            bounds: Aabb::cube(1.0),
            frame_convention: FrameConvention::Canonical,
            views: vec![View {
                id: "v0".into(),
                camera: cam,
                split: Split::Train,
                cube,
            }],
        }
    }

    fn batch(ds: &MultiViewDataset, n: usize, seed: u64) -> RayBatch {
        let pool = ray_pool(ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = RayBatch {
            rays: vec![],
            samples: vec![],
            wavelengths: ds.wavelengths.clone(),
            targets: vec![],
        };
        for k in 0..n {
            let r = (k * 7) % pool.rays.len();
            let ray = pool.rays[r];
            b.samples.push(sample_bins(ray.near, ray.far, 12, true, &mut rng));
            b.rays.push(ray);
            b.targets.extend_from_slice(&pool.targets[r * 2..r * 2 + 2]);
        }
        b
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let ds = constant_dataset(StokesVector::new(0.6, 0.2, -0.1, 0.05));
        let b = batch(&ds, 70, 1);
        let field = small_field(3);
        let cfg = ObjectiveConfig {
            loss_weights: LossWeights([1.0, 2.0, 3.0, 8.0]),
            reg_weight: 0.5,
            background: StokesVector::new(0.1, 0.0, 0.0, 0.0),
        };
        let obj = objective_and_gradient(&field, &b, &cfg).unwrap();
        let flat = field.params.to_flat();
        let grad = obj.grads.to_flat();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let k = rng.random_range(0..flat.len());
            let eval = |v: f64| {
                let mut f = field.clone();
                let mut p = flat.clone();
                p[k] = v;
                f.params.set_from_flat(&p).unwrap();
                objective_and_gradient(&f, &b, &cfg).unwrap().total
            };
            let fd = (eval(flat[k] + h) - eval(flat[k] - h)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {k}: fd {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn zero_steps_leave_parameters_unchanged() {
        let ds = constant_dataset(StokesVector::new(0.6, 0.2, -0.1, 0.05));
        let field = small_field(0);
        let cfg = TrainConfig {
            steps: 0,
            loss_weighting: LossWeighting::Uniform,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg, field.clone()).unwrap();
        assert_eq!(out.field, field);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = constant_dataset(StokesVector::new(0.6, 0.2, -0.1, 0.05));
        let cfg = TrainConfig {
            steps: 60,
            batch_rays: 32,
            samples_per_ray: 16,
            learning_rate: 1e-2,
            loss_weighting: LossWeighting::Uniform,
            log_every: 0,
            ..TrainConfig::default()
        };
        let a = train(&ds, &cfg, small_field(1)).unwrap();
        let b = train(&ds, &cfg, small_field(1)).unwrap();
        assert_eq!(a.field, b.field);
        assert_eq!(a.trace, b.trace);
        let head: f64 = a.trace[..5].iter().map(|r| r.total).sum();
        let tail: f64 = a.trace[55..].iter().map(|r| r.total).sum();
        assert!(tail < 0.5 * head, "{head} -> {tail}");
        let csv = trace_to_csv(&a.trace).unwrap();
        assert!(csv.starts_with("step,total,s0,s1,s2,s3,regularizer,learning_rate"));
        assert_eq!(csv.lines().count(), 61);
    }

    #[test]
    fn learning_rate_decays_to_final_fraction() {
        let cfg = TrainConfig {
            steps: 100,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        assert!((cfg.learning_rate_at(100) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn rejects_camera_local_data_and_constant_channels() {
        let mut ds = constant_dataset(StokesVector::new(0.6, 0.2, -0.1, 0.05));
        ds.frame_convention = FrameConvention::CameraLocal;
        ds.views[0].camera.frame_convention = FrameConvention::CameraLocal;
        assert!(matches!(
            train(&ds, &TrainConfig::default(), small_field(0)),
            Err(Error::FrameMismatch(_))
        ));
        // every pixel identical: adaptive weights are undefined
        let ds = constant_dataset(StokesVector::new(0.6, 0.2, -0.1, 0.05));
        assert!(matches!(
            train(&ds, &TrainConfig::default(), small_field(0)),
            Err(Error::DegenerateDataset { channel: 0 })
        ));
    }
}
