//! Benchmarks of the data-parallel inner loops. The `parallel` feature
//! (on by default) routes them through rayon; without it the same code
//! runs sequentially. Run both and let criterion compare against the
//! saved baseline:
//!
//! ```text
//! cargo bench -p groundslam-core
//! cargo bench -p groundslam-core --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use groundslam_core::geometry::Point3;
use groundslam_core::ground_plane::{fit_plane_ransac, RansacConfig};
use groundslam_core::labels::{mean_iou, LabelRaster};
use groundslam_core::pipeline::{run, PipelineConfig, RunOptions, SimSource};
use groundslam_core::refine::{block_match_displacements, BlockMatchParams, Feature, GrayImage};
use groundslam_core::sim::{generate_world, DriftModel, SimConfig};

fn plane_points(n: usize) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            if i % 10 < 7 {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    -1.7 + rng.random_range(-0.01..0.01),
                    rng.random_range(-10.0..10.0),
                )
            } else {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            }
        })
        .collect()
}

fn bench_plane_ransac(c: &mut Criterion) {
    let points = plane_points(20_000);
    let cfg = RansacConfig::default();
    c.bench_function("plane_ransac_20k", |b| {
        b.iter(|| fit_plane_ransac(black_box(&points), black_box(&cfg)).unwrap())
    });
}

fn textured(width: usize, height: usize, shift: i64) -> GrayImage {
    let mut data = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let sx = x as i64 - shift;
            data[y * width + x] = ((sx * 7 + y as i64 * 13).rem_euclid(251)) as u8;
        }
    }
    GrayImage::new(width, height, data)
}

fn bench_block_match(c: &mut Criterion) {
    let prev = textured(640, 480, 0);
    let cur = textured(640, 480, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let features: Vec<Feature> = (0..500)
        .map(|i| {
            Feature::new(
                i,
                groundslam_core::geometry::Point2::new(
                    rng.random_range(30.0..610.0),
                    rng.random_range(30.0..450.0),
                ),
            )
        })
        .collect();
    let params = BlockMatchParams::for_threshold(2.0);
    c.bench_function("block_match_500", |b| {
        b.iter(|| {
            block_match_displacements(
                black_box(&prev),
                black_box(&cur),
                black_box(&features),
                &params,
            )
            .unwrap()
        })
    });
}

fn bench_mean_iou(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data_a: Vec<u8> = (0..1241 * 376).map(|_| rng.random_range(0..4)).collect();
    let data_b: Vec<u8> = (0..1241 * 376).map(|_| rng.random_range(0..4)).collect();
    let a = LabelRaster::new(1241, 376, data_a, 1.0).unwrap();
    let b = LabelRaster::new(1241, 376, data_b, 1.0).unwrap();
    c.bench_function("mean_iou_1241x376", |bch| {
        bch.iter(|| mean_iou(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_pipeline_run(c: &mut Criterion) {
    let sim = SimConfig {
        frames: 150,
        ..Default::default()
    };
    let world = generate_world(&sim, 5).unwrap();
    let cfg = PipelineConfig {
        intrinsics: sim.intrinsics,
        h_real: sim.h_real,
        downsample_factor: sim.downsample_factor,
        features_per_frame: sim.features_per_frame,
        ..Default::default()
    };
    let drift = DriftModel {
        sigma: 0.01,
        seed: 5,
    };
    c.bench_function("pipeline_150_frames", |b| {
        b.iter(|| {
            run(
                black_box(&cfg),
                SimSource::new(world.clone(), Some(drift)),
                RunOptions::default(),
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_plane_ransac,
    bench_block_match,
    bench_mean_iou,
    bench_pipeline_run
);
criterion_main!(benches);
