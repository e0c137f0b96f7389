use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nimap_bench::trained_atlas;
use nimap_core::renderer::composite;
use nimap_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mapping(c: &mut Criterion) {
    let (cfg, mut atlas, pose) = trained_atlas(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let (lo, hi) = atlas.submaps[0].model.grid.allocated_bounds().expect("allocated");
    let points: Vec<Vec3> = (0..1000)
        .map(|_| Vec3::from_fn(|i, _| rng.random_range(lo[i]..hi[i])))
        .collect();
    c.bench_function("interpolate_1k", |b| {
        b.iter(|| {
            let grid = &atlas.submaps[0].model.grid;
            points.iter().filter(|p| grid.interpolate(p).is_ok()).count()
        })
    });

    let n = 16;
    let depths: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let occ: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    c.bench_function("composite_16", |b| b.iter(|| composite(black_box(&depths), &occ, &colors)));

    let mut group = c.benchmark_group("view");
    group.sample_size(10);
    group.bench_function("render_fused_160x120", |b| b.iter(|| atlas.render_fused(&pose, &cfg.camera)));
    group.bench_function("train_step_1024", |b| b.iter(|| atlas.train_keyframe(0, 1, &mut rng)));
    group.finish();
}

criterion_group!(benches, mapping);
criterion_main!(benches);
