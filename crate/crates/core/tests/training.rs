use nalgebra::Vector3;
use spectropol::dataio::{MultiViewDataset, Split, StokesCube, View};
use spectropol::field::{EncodingConfig, FieldArch, NeuralField};
use spectropol::renderer::{Aabb, Camera, FrameConvention, RenderConfig};
use spectropol::trainer::{evaluate, LossWeighting, TrainConfig};
use spectropol::StokesVector;

const TARGET: StokesVector = StokesVector([0.6, 0.25, -0.1, 0.08]);

fn constant_dataset() -> MultiViewDataset {
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
            cube.set(p / 8, p % 8, l, TARGET);
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

fn field(seed: u64) -> NeuralField {
    let arch = FieldArch {
        trunk_depth: 2,
        trunk_width: 32,
        skip_layer: None,
        head_width: 16,
    };
    let enc = EncodingConfig {
        k_position: 2,
        k_direction: 1,
        ..EncodingConfig::default()
    };
    NeuralField::initialized(arch, enc, seed).unwrap()
}

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_rays: 32,
        wavelengths_per_batch: None,
        learning_rate: 5e-3,
        reg_weight: 0.0,
        samples_per_ray: 16,
        loss_weighting: LossWeighting::Uniform,
        log_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn constant_scene_is_fit_within_2000_steps() {
    let ds = constant_dataset();
    let out = spectropol::trainer::train(&ds, &config(2000), field(0)).unwrap();
    let best = out.trace.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
    assert!(best < 1e-4, "best loss {best}");
    let first = out.trace[0].total;
    let last = out.trace.last().unwrap().total;
    assert!(last < first * 1e-2, "{first} -> {last}");

    let render = RenderConfig {
        samples_per_ray: 32,
        ..RenderConfig::default()
    };
    let (m, _) = evaluate(&out.field, &ds, Split::Train, &render).unwrap();
    assert!(m.elements[0].rmse < 1e-2, "{:?}", m.elements);
}

#[test]
fn same_seed_same_trace() {
    let ds = constant_dataset();
    let a = spectropol::trainer::train(&ds, &config(30), field(7)).unwrap();
    let b = spectropol::trainer::train(&ds, &config(30), field(7)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.field, b.field);
    let mut other = config(30);
    other.seed = 1;
    let c = spectropol::trainer::train(&ds, &other, field(7)).unwrap();
    assert_ne!(a.trace, c.trace);
}
