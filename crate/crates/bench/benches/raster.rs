use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tsmlab::generator::{backward, pixel_scale_map, render};
use tsmlab::{clip_depth, ClipConfig, ScaleMap, SplatScene, ViewParam};

fn raster(c: &mut Criterion) {
    let mut group = c.benchmark_group("raster");
    for (side, cols) in [(16usize, 4usize), (32, 8), (64, 8)] {
        let scene = SplatScene::grid(cols, cols, side, side, 1.0);
        let view = ViewParam::identity();
        let out = render(&scene, &view, side, side).unwrap();
        let id = format!("{side}px_{}splats", cols * cols);
        group.bench_with_input(BenchmarkId::new("render", &id), &side, |b, &s| {
            b.iter(|| render(black_box(&scene), &view, s, s).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", &id), &side, |b, _| {
            b.iter(|| backward(black_box(&scene), &view, &out).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("scale_map", &id), &side, |b, &s| {
            b.iter(|| pixel_scale_map(&scene, &view, s, s, 1.0).unwrap())
        });
    }
    group.finish();
}

fn clipping(c: &mut Criterion) {
    let n = 64 * 64;
    let g: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 100.0 - 5.0).collect();
    let cfg = ClipConfig {
        scale_map: ScaleMap::PerPixel(vec![1.5; n]),
        threshold: 0.5,
        color_norm_cap: 10.0,
        passthrough_normal: false,
    };
    c.bench_function("clip_depth_64x64", |b| b.iter(|| clip_depth(black_box(&g), &cfg).unwrap()));
}

criterion_group!(benches, raster, clipping);
criterion_main!(benches);
