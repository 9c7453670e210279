//! Parallel against sequential throughput for the two data-parallel paths:
//! Monte Carlo voting and batch inference.
//!
//! The sequential side runs inside a one-thread rayon pool, which is what the
//! `parallel` feature falls back to in spirit. Build with
//! `--no-default-features` to bench the rayon-free code path itself.

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use fleetlens_core::backend::{run_batch, ImageRequest, Mode, SimBackend, StochasticProfile};
use fleetlens_core::evaluation::simulate_mvi_gain;
use fleetlens_core::Task;

fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool").install(f)
}

fn simulation(c: &mut Criterion) {
    let profile = StochasticProfile::new(0.8, 0.05, 7).unwrap();
    let plates = 20_000;
    let mut group = c.benchmark_group("simulate_mvi_gain");
    group.throughput(Throughput::Elements(plates as u64));
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| single_thread(|| simulate_mvi_gain(&profile, 4, 5, plates)))
    });
    group.bench_function("parallel", |b| b.iter(|| simulate_mvi_gain(&profile, 4, 5, plates)));
    group.finish();
}

fn batch(c: &mut Criterion) {
    let labels: Vec<String> = ["Red", "White", "Black", "Silver", "Blue"].map(String::from).to_vec();
    let n = 20_000;
    let truth: BTreeMap<String, String> = (0..n).map(|i| (format!("r{i:06}"), labels[i % 5].clone())).collect();
    let profile = StochasticProfile::new(0.7, 0.1, 11).unwrap();
    let backend = SimBackend::new("sim", Task::Colour, Mode::Detect, profile, labels, &truth).unwrap();
    let requests: Vec<ImageRequest> = truth
        .keys()
        .map(|id| ImageRequest { record_id: id.clone(), image_ref: String::new(), task: Task::Colour })
        .collect();
    let cores = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);

    let mut group = c.benchmark_group("run_batch");
    group.throughput(Throughput::Elements(n as u64));
    group.sample_size(10);
    for workers in [1, cores] {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| run_batch(&backend, &requests, w))
        });
    }
    group.finish();
}

criterion_group!(benches, simulation, batch);
criterion_main!(benches);
