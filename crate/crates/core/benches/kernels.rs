//! Sequential vs data-parallel execution of the hot kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satmc_core::diffusion::diffuse_graph;
use satmc_core::evaluation::{mmd_rbf, Bandwidth, MmdEstimator};
use satmc_core::graph::{generate_shift_pair, ShiftPairConfig};
use satmc_core::par::{map_with_jobs, Exec};
use satmc_core::training::{train_satmc, TrainConfig};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn sparse_propagation(c: &mut Criterion) {
    let gen = generate_shift_pair(&ShiftPairConfig::default()).unwrap();
    let adjacency = gen.pair.source().adjacency().sym_normalized();
    let diffused = diffuse_graph(gen.pair.source(), 0.05, 1e-3).unwrap().matrix;
    let x = random(&mut ChaCha8Rng::seed_from_u64(1), 600, 128);
    let mut group = c.benchmark_group("propagate");
    for (op_name, op) in [("adjacency", &adjacency), ("diffusion", &diffused)] {
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(op_name, mode), &exec, |b, &exec| {
                b.iter(|| black_box(op.matmul(x.view(), exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn mmd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (xs, xt) = (random(&mut rng, 600, 16), random(&mut rng, 600, 16));
    let mut group = c.benchmark_group("mmd_rbf");
    for (mode, exec) in MODES {
        group.bench_function(mode, |b| {
            b.iter(|| {
                black_box(
                    mmd_rbf(
                        xs.view(),
                        xt.view(),
                        Bandwidth::Median,
                        MmdEstimator::Biased,
                        exec,
                    )
                    .unwrap(),
                )
            })
        });
    }
    group.finish();
}

fn multi_seed(c: &mut Criterion) {
    let config = ShiftPairConfig {
        n_source: 150,
        n_target: 150,
        feature_dim: 32,
        ..Default::default()
    };
    let gen = generate_shift_pair(&config).unwrap();
    let train = TrainConfig {
        epochs: 10,
        gie_epochs: 5,
        telemetry_mmd: false,
        ..Default::default()
    };
    let mut group = c.benchmark_group("seeds");
    group.sample_size(10);
    for jobs in [1usize, 4] {
        group.bench_with_input(BenchmarkId::new("jobs", jobs), &jobs, |b, &jobs| {
            b.iter(|| {
                map_with_jobs((0..4u64).collect(), jobs, |seed| {
                    let cfg = TrainConfig {
                        seed,
                        ..train.clone()
                    };
                    train_satmc(&gen.pair, &cfg, None).unwrap().history.len()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, sparse_propagation, mmd, multi_seed);
criterion_main!(benches);
