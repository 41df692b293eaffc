use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use spectropol::dataio::{
    convert_stokes_frames, load_cube, load_dataset, save_cube, write_atomic, MultiViewDataset,
    Split, StokesCube,
};
use spectropol::field::{load_checkpoint, save_checkpoint, EncodingConfig, FieldArch, NeuralField};
use spectropol::renderer::{render_image, FrameConvention, RenderConfig};
use spectropol::trainer::{evaluate_cubes, trace_to_csv, train, LossWeighting, TrainConfig};
use spectropol::Error;

use crate::record::{require_dir, require_file, require_out, write_record};
use crate::synth::Convention;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 8×256 trunk, skip at 4, 128-wide head, 10 position frequencies.
    Full,
    /// 4×64 trunk, skip at 2, 32-wide head, 6 position frequencies.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Adaptive,
    Uniform,
}

/// Contents of a `--config` file; every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub train: Option<TrainConfig>,
    pub arch: Option<FieldArch>,
    pub k_position: Option<usize>,
    pub k_direction: Option<usize>,
    pub k_wavelength: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON file with `train`, `arch` and encoding settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network size.
    #[arg(long, value_enum, default_value_t = Preset::Small)]
    pub preset: Preset,
    /// Optimizer steps (default 2000).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Rays per step (default 256).
    #[arg(long)]
    pub batch_rays: Option<usize>,
    /// Samples per ray.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Initial learning rate (default 5e-3).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight-variance regularizer coefficient (default 0.01).
    #[arg(long)]
    pub reg_weight: Option<f64>,
    /// Wavelengths drawn per step (default 5; 0 uses all).
    #[arg(long)]
    pub wavelengths_per_batch: Option<usize>,
    /// Per-element loss weighting (default adaptive).
    #[arg(long, value_enum)]
    pub weighting: Option<Weighting>,
    /// Loss trace CSV (default: `<out>.trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedTrain {
    train: TrainConfig,
    arch: FieldArch,
    encoding: EncodingConfig,
}

fn resolve_train(g: &Global, a: &TrainArgs, ds: &MultiViewDataset) -> Result<ResolvedTrain> {
    let file: TrainFile = match &a.config {
        Some(p) => {
            require_file(p, "training config")?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Json {
                path: p.clone(),
                source: e,
            })?
        }
        None => TrainFile::default(),
    };
    let (arch, k_position) = match a.preset {
        Preset::Full => (FieldArch::default(), 10),
        Preset::Small => (
            FieldArch {
                trunk_depth: 4,
                trunk_width: 64,
                skip_layer: Some(2),
                head_width: 32,
            },
            6,
        ),
    };
    let mut train = file.train.unwrap_or(TrainConfig {
        steps: 2000,
        batch_rays: 256,
        samples_per_ray: 32,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    });
    train.seed = g.seed;
    if let Some(v) = a.steps {
        train.steps = v;
    }
    if let Some(v) = a.batch_rays {
        train.batch_rays = v;
    }
    if let Some(v) = a.samples {
        train.samples_per_ray = v;
    }
    if let Some(v) = a.lr {
        train.learning_rate = v;
    }
    if let Some(v) = a.reg_weight {
        train.reg_weight = v;
    }
    if let Some(v) = a.wavelengths_per_batch {
        train.wavelengths_per_batch = (v > 0).then_some(v);
    }
    match a.weighting {
        Some(Weighting::Adaptive) => train.loss_weighting = LossWeighting::Adaptive,
        Some(Weighting::Uniform) => train.loss_weighting = LossWeighting::Uniform,
        None => {}
    }
    let defaults = EncodingConfig::default();
    let encoding = EncodingConfig {
        k_position: file.k_position.unwrap_or(k_position),
        k_direction: file.k_direction.unwrap_or(2),
        k_wavelength: file.k_wavelength.unwrap_or(defaults.k_wavelength),
        bounds: ds.bounds,
        ..defaults
    };
    Ok(ResolvedTrain {
        train,
        arch: file.arch.unwrap_or(arch),
        encoding,
    })
}

/// Training and rendering work in the canonical frame.
fn to_canonical(mut ds: MultiViewDataset) -> Result<MultiViewDataset> {
    if ds.frame_convention == FrameConvention::Canonical {
        return Ok(ds);
    }
    info!("converting camera-local cubes to the canonical frame");
    for v in ds.views.iter_mut() {
        v.cube = convert_stokes_frames(&v.cube, &v.camera, ds.frame_convention, FrameConvention::Canonical)?;
        v.camera.frame_convention = FrameConvention::Canonical;
    }
    ds.frame_convention = FrameConvention::Canonical;
    Ok(ds)
}

pub fn run_train(g: &Global, a: TrainArgs) -> Result<()> {
    let out = require_out(g)?;
    require_dir(&a.dataset, "dataset")?;
    let ds = to_canonical(load_dataset(&a.dataset)?)?;
    let resolved = resolve_train(g, &a, &ds)?;
    resolved.train.validate()?;
    let field = NeuralField::initialized(resolved.arch, resolved.encoding.clone(), g.seed)?;
    info!(
        "training {} parameters for {} steps",
        field.params.num_params(),
        resolved.train.steps
    );
    let outcome = train(&ds, &resolved.train, field)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".trace.csv");
        out.with_file_name(name)
    });
    write_atomic(&trace_path, trace_to_csv(&outcome.trace)?.as_bytes())?;
    save_checkpoint(&outcome.field, &out)?;
    if let Some(last) = outcome.trace.last() {
        println!(
            "trained {} steps; final batch loss {:.4e} (s0 {:.3e}, s1 {:.3e}, s2 {:.3e}, s3 {:.3e}), loss weights {:?}",
            outcome.trace.len(),
            last.total,
            last.s0,
            last.s1,
            last.s2,
            last.s3,
            outcome.loss_weights.0
        );
    }
    write_record(&out, "train", g, &(&a, &resolved, outcome.loss_weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn matches(self, s: Split) -> bool {
        match self {
            SplitArg::All => true,
            SplitArg::Train => s == Split::Train,
            SplitArg::Test => s == Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset providing the cameras and wavelengths.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Views to use.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Render only this view.
    #[arg(long)]
    pub view: Option<String>,
    /// Samples per ray.
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    /// Jitter samples within their bins instead of using bin midpoints.
    #[arg(long)]
    pub stratified: bool,
    /// Frame of the written cubes (default: the dataset's).
    #[arg(long, value_enum)]
    pub convention: Option<Convention>,
}

/// Renders `views` of `ds` and expresses them in `convention`.
fn render_views(
    field: &NeuralField,
    ds: &MultiViewDataset,
    select: impl Fn(&spectropol::dataio::View) -> bool,
    cfg: &RenderConfig,
    convention: FrameConvention,
) -> Result<Vec<(String, StokesCube)>> {
    let mut out = Vec::new();
    for v in ds.views.iter().filter(|v| select(v)) {
        info!("rendering view {}", v.id);
        let img = render_image(field, &v.camera, &ds.wavelengths, cfg)?;
        let cube = convert_stokes_frames(&img.cube, &v.camera, FrameConvention::Canonical, convention)?;
        out.push((v.id.clone(), cube));
    }
    Ok(out)
}

fn render_config(g: &Global, ds: &MultiViewDataset, samples: usize, stratified: bool) -> RenderConfig {
    RenderConfig {
        samples_per_ray: samples,
        stratified,
        seed: g.seed,
        clip_to: Some(ds.bounds),
        ..RenderConfig::default()
    }
}

fn cube_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.bin"))
}

pub fn run_render(g: &Global, a: RenderArgs) -> Result<()> {
    let out = require_out(g)?;
    require_file(&a.checkpoint, "checkpoint")?;
    require_dir(&a.dataset, "dataset")?;
    let field = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.dataset)?;
    if let Some(id) = &a.view {
        if !ds.views.iter().any(|v| &v.id == id) {
            return Err(Error::InvalidInput(format!("dataset has no view `{id}`")).into());
        }
    }
    let convention = a.convention.map_or(ds.frame_convention, Into::into);
    let cfg = render_config(g, &ds, a.samples, a.stratified);
    let select = |v: &spectropol::dataio::View| {
        a.split.matches(v.split) && a.view.as_ref().map_or(true, |id| &v.id == id)
    };
    let cubes = render_views(&field, &ds, select, &cfg, convention)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    for (id, cube) in &cubes {
        save_cube(&cube_path(&out, id), cube, convention)?;
    }
    println!("rendered {} views to {}", cubes.len(), out.display());
    write_record(&out, "render", g, &(&a, &cfg))
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to render from.
    #[arg(long, conflicts_with = "rendered")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of previously rendered `<view>.bin` cubes.
    #[arg(long)]
    pub rendered: Option<PathBuf>,
    /// Views to use.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Samples per ray.
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
}

pub fn run_eval(g: &Global, a: EvalArgs) -> Result<()> {
    let out = require_out(g)?;
    require_dir(&a.dataset, "dataset")?;
    let ds = load_dataset(&a.dataset)?;
    let select = |v: &spectropol::dataio::View| a.split.matches(v.split);
    let rendered: Vec<(String, StokesCube)> = match (&a.checkpoint, &a.rendered) {
        (Some(ckpt), None) => {
            require_file(ckpt, "checkpoint")?;
            let field = load_checkpoint(ckpt)?;
            let cfg = render_config(g, &ds, a.samples, false);
            render_views(&field, &ds, select, &cfg, ds.frame_convention)?
        }
        (None, Some(dir)) => {
            require_dir(dir, "rendered cube directory")?;
            let mut v = Vec::new();
            for view in ds.views.iter().filter(|v| select(v)) {
                let path = cube_path(dir, &view.id);
                require_file(&path, "rendered cube")?;
                let (cube, conv) = load_cube(&path)?;
                let cube = convert_stokes_frames(&cube, &view.camera, conv, ds.frame_convention)?;
                v.push((view.id.clone(), cube));
            }
            v
        }
        _ => {
            return Err(
                Error::InvalidInput("pass exactly one of --checkpoint or --rendered".into()).into(),
            )
        }
    };
    let pairs: Vec<_> = ds
        .views
        .iter()
        .filter(|v| select(v))
        .zip(&rendered)
        .map(|(v, (id, cube))| (id.as_str(), cube, &v.cube))
        .collect();
    let metrics = evaluate_cubes(&pairs)?;
    write_atomic(&out, metrics.to_csv()?.as_bytes())?;
    print!("{}", metrics.table());
    write_record(&out, "eval", g, &a)
}
