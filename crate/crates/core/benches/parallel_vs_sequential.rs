use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hierflow::generative::{simulate_items, SimulationBatch};
use hierflow::posterior::{NpeSampler, PosteriorSampler};
use hierflow::rng::seeded;
use hierflow::training::{
    loss_and_grad, prepare_batch, train, LossMode, NetworkConfig, Networks, ParamStats,
};
use hierflow::{Execution, ModelConfig, TrainConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_items");
    group.sample_size(10);
    for id in ["normal-normal-b", "air-traffic", "ddm-shared"] {
        let spec = ModelConfig::from_id(id).unwrap().build().unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, id), &exec, |b, &exec| {
                b.iter(|| simulate_items(spec.as_ref(), 32, 1, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grad");
    group.sample_size(10);
    for id in ["normal-normal-b", "air-traffic"] {
        let spec = ModelConfig::from_id(id).unwrap().build().unwrap();
        let items = simulate_items(spec.as_ref(), 32, 2, Execution::Sequential).unwrap();
        let stats = ParamStats::estimate(spec.as_ref(), 1000, 3).unwrap();
        let prepared = prepare_batch(&SimulationBatch::from_items(&items).unwrap(), &stats);
        let nets = Networks::new(
            spec.as_ref(),
            &NetworkConfig::for_model(spec.as_ref()),
            &mut seeded(4),
        )
        .unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, id), &exec, |b, &exec| {
                b.iter(|| loss_and_grad(&nets, &prepared, LossMode::Train { seed: 5 }, true, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("posterior_sample");
    group.sample_size(10);
    let model = ModelConfig::from_id("normal-normal-b").unwrap();
    let config = TrainConfig {
        simulation_budget: 64,
        epochs: 1,
        ..TrainConfig::default()
    };
    let checkpoint = train(&model, &config).unwrap();
    let spec = model.build().unwrap();
    let dataset = simulate_items(spec.as_ref(), 1, 6, Execution::Sequential).unwrap()[0]
        .dataset
        .clone();
    for (name, exec) in MODES {
        let mut sampler = NpeSampler::new(checkpoint.clone()).unwrap();
        sampler.execution = exec;
        group.bench_function(BenchmarkId::new(name, "normal-normal-b"), |b| {
            b.iter(|| sampler.sample(&dataset, 1000, &mut seeded(7)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, simulation, gradients, sampling);
criterion_main!(benches);
