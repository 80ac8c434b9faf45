//! Sequential vs rayon execution of the data-parallel hot paths: local
//! training across clients and whole simulated repeats.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tanglefl::config::ExperimentConfig;
use tanglefl::fl::{init_model, local_train, make_synthetic_dataset, ModelShape, SyntheticSpec, TrainConfig};
use tanglefl::par::Execution;
use tanglefl::sim::run_repeat;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn local_training(c: &mut Criterion) {
    let spec = SyntheticSpec { n_clients: 20, total_samples: 2000, ..SyntheticSpec::default() };
    let (shards, _) = make_synthetic_dataset(&spec).unwrap();
    let global = init_model(1, ModelShape::new(8, 32, 4)).unwrap();
    let train = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let mut group = c.benchmark_group("local_training_20_clients");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mode.map(&shards, |s| local_train(black_box(&global), s, &train).unwrap()))
        });
    }
    group.finish();
}

fn simulated_repeat(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_repeat_5_rounds");
    group.sample_size(10);
    for (name, mode) in MODES {
        let cfg = ExperimentConfig { rounds: 5, execution: mode, ..ExperimentConfig::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_repeat(black_box(&cfg), 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, local_training, simulated_repeat);
criterion_main!(benches);
