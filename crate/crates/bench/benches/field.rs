use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use spectropol::field::{EncodingConfig, FieldArch, NeuralField};
use spectropol::renderer::{generate_ray, render_image, Aabb, Camera, RenderConfig, StokesField};
use spectropol::trainer::{objective_and_gradient, LossWeights, ObjectiveConfig, RayBatch};
use spectropol::StokesVector;

fn field() -> NeuralField {
    let arch = FieldArch {
        trunk_depth: 4,
        trunk_width: 64,
        skip_layer: Some(2),
        head_width: 32,
    };
    let enc = EncodingConfig {
        k_position: 6,
        k_direction: 2,
        bounds: Aabb::cube(1.0),
        ..EncodingConfig::default()
    };
    NeuralField::initialized(arch, enc, 0).unwrap()
}

fn camera() -> Camera {
    Camera::look_at(
        Vector3::new(0.0, -3.0, 1.5),
        Vector3::zeros(),
        Vector3::z(),
        0.7,
        16,
        16,
    )
    .unwrap()
}

fn bench_eval(c: &mut Criterion) {
    let f = field();
    let n = 1024;
    let pos: Vec<_> = (0..n)
        .map(|i| Vector3::new((i % 7) as f64 / 7.0, (i % 11) as f64 / 11.0, -0.5))
        .collect();
    let dir = vec![Vector3::new(0.0, 0.6, 0.8); n];
    let wl = [450.0, 550.0, 650.0];
    c.bench_function("eval_points 1024 x 3 wavelengths", |b| {
        b.iter(|| f.eval_points(black_box(&pos), &dir, &wl).unwrap())
    });
}

fn bench_render(c: &mut Criterion) {
    let f = field();
    let cam = camera();
    let cfg = RenderConfig {
        samples_per_ray: 32,
        clip_to: Some(Aabb::cube(1.0)),
        ..RenderConfig::default()
    };
    c.bench_function("render_image 16x16, 32 samples, 3 wavelengths", |b| {
        b.iter(|| render_image(&f, black_box(&cam), &[450.0, 550.0, 650.0], &cfg).unwrap())
    });
}

fn bench_gradient(c: &mut Criterion) {
    let f = field();
    let cam = camera();
    let cfg = RenderConfig {
        samples_per_ray: 32,
        stratified: true,
        ..RenderConfig::default()
    };
    let bounds = Aabb::cube(1.0);
    let rays: Vec<_> = (0..cam.num_pixels())
        .filter_map(|p| generate_ray(&cam, p / 16, p % 16).unwrap().clipped_to(&bounds))
        .take(128)
        .collect();
    let samples = rays
        .iter()
        .enumerate()
        .map(|(i, r)| cfg.samples_for(r, i as u64))
        .collect();
    let wavelengths = vec![500.0, 600.0];
    let targets = vec![StokesVector::new(0.5, 0.1, 0.0, 0.05); rays.len() * 2];
    let batch = RayBatch {
        rays,
        samples,
        wavelengths,
        targets,
    };
    let obj = ObjectiveConfig {
        loss_weights: LossWeights::UNIFORM,
        reg_weight: 0.01,
        background: StokesVector::ZERO,
    };
    c.bench_function("objective_and_gradient 128 rays, 32 samples, 2 wavelengths", |b| {
        b.iter(|| objective_and_gradient(&f, black_box(&batch), &obj).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_eval, bench_render, bench_gradient
}
criterion_main!(benches);
