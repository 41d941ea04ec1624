//! Hot kernels behind the analysis pipeline: chain construction, the
//! structural transforms, the potential-theoretic solves and path
//! sampling, each at the working sizes of the check suites.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use metastab_core::models::{random_reversible, DogGraph, DogGraphSpec};
use metastab_core::potential::{capacity, mean_jump_rates, quasi_stationary};
use metastab_core::simulate::{sample_path, Start};
use metastab_core::spectral::spectral_gap;
use metastab_core::transforms::{reflect_chain, trace_chain, Partition};
use metastab_core::Chain;

fn dog_with_partition() -> (Chain, Partition) {
    let dog = DogGraph::build(DogGraphSpec { n: 8, d: 2 }).unwrap();
    let partition = dog.metastable_partition(None).unwrap();
    (dog.chain, partition)
}

fn build_chain(c: &mut Criterion) {
    c.bench_function("build_random_chain_n60", |b| {
        b.iter(|| random_reversible(black_box(60), black_box(7), 0.9).unwrap())
    });
}

fn transforms(c: &mut Criterion) {
    let (chain, partition) = dog_with_partition();
    let traced = partition.traced_states();
    c.bench_function("trace_dog8", |b| {
        b.iter(|| trace_chain(black_box(&chain), &traced).unwrap())
    });
    c.bench_function("reflect_dog8_well", |b| {
        b.iter(|| reflect_chain(black_box(&chain), partition.well(0)).unwrap())
    });
}

fn gaps(c: &mut Criterion) {
    let (chain, _) = dog_with_partition();
    c.bench_function("spectral_gap_dog8", |b| {
        b.iter(|| spectral_gap(black_box(&chain)).unwrap().gap)
    });
}

fn potentials(c: &mut Criterion) {
    let (chain, partition) = dog_with_partition();
    c.bench_function("capacity_dog8", |b| {
        b.iter(|| capacity(black_box(&chain), partition.well(0), partition.well(1)).unwrap().value)
    });
    c.bench_function("quasi_stationary_dog8", |b| {
        b.iter(|| quasi_stationary(black_box(&chain), partition.well(0)).unwrap().rate)
    });

    let traced = partition.traced_states();
    let (trace, kept) = trace_chain(&chain, &traced).unwrap();
    let wells: Vec<Vec<usize>> = partition
        .wells()
        .iter()
        .map(|well| {
            kept.iter()
                .enumerate()
                .filter(|(_, parent)| well.contains(parent))
                .map(|(t, _)| t)
                .collect()
        })
        .collect();
    let local = Partition::new(trace.n(), wells).unwrap();
    c.bench_function("mean_jump_rates_dog8", |b| {
        b.iter(|| mean_jump_rates(black_box(&trace), &local, 1.0).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let (chain, _) = dog_with_partition();
    c.bench_function("sample_path_dog8_t100", |b| {
        b.iter(|| sample_path(black_box(&chain), Start::State(0), 100.0, 7).unwrap())
    });
}

criterion_group!(kernels, build_chain, transforms, gaps, potentials, sampling);
criterion_main!(kernels);
