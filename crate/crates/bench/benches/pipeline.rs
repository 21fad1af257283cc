use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ddcrp_bench::{ellipse_mask, rng, sampler_fixture, scene_image};
use ddcrp_core::gestalt_measures;
use ddcrp_core::partition::LinkState;
use ddcrp_core::sampler::gibbs_sweep;
use ddcrp_core::slic::slic_superpixels;
use ddcrp_core::PipelineConfig;

fn slic(c: &mut Criterion) {
    let image = scene_image(320, 240, 5);
    c.bench_function("slic 320x240 n=500", |b| {
        b.iter(|| slic_superpixels(black_box(&image), 500, 45.0, 0).unwrap())
    });
}

fn sweep(c: &mut Criterion) {
    let fx = sampler_fixture(320, 240, 500, 5);
    let config = PipelineConfig::default().sampler_config().unwrap();
    let start = LinkState::self_links(fx.features.len());
    let mut r = rng(1);
    c.bench_function(&format!("gibbs sweep n={}", fx.labels.n_superpixels()), |b| {
        b.iter(|| gibbs_sweep(black_box(&start), &fx.features, &fx.distances, &config, &mut r).unwrap())
    });
}

fn gestalt(c: &mut Criterion) {
    let small = ellipse_mask(20.0, 12.0);
    let large = ellipse_mask(120.0, 70.0);
    c.bench_function("gestalt ellipse 40x24", |b| b.iter(|| gestalt_measures(black_box(&small))));
    c.bench_function("gestalt ellipse 240x140", |b| b.iter(|| gestalt_measures(black_box(&large))));
}

criterion_group!(benches, slic, sweep, gestalt);
criterion_main!(benches);
