//! Benchmarks the empirical sweep under the two execution schedules: the
//! sequential shard loop and the rayon-parallel shard map (which degrades to
//! the sequential schedule when the `parallel` feature is disabled). Both
//! run the identical configuration against a prebuilt factor table, so the
//! comparison isolates scheduling overhead and scaling.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quadrank::arith::{FactoredOdd, SpfTable};
use quadrank::harness::{run_accumulate, ExecMode, ExperimentConfig};
use quadrank::measures::KVector;
use quadrank::specialdiv::TargetGroup;

/// The standard demonstration family D ≡ 59 (mod 60) with target (5, 1),
/// first moments of both characters, cut into enough blocks to occupy every
/// core.
fn config(x: u64, shards: usize) -> ExperimentConfig {
    let tg = TargetGroup::new(FactoredOdd::new(5).unwrap(), FactoredOdd::new(1).unwrap())
        .unwrap();
    let kvectors: Vec<KVector> = tg
        .characters()
        .iter()
        .map(|chi| KVector::from_pairs(&tg, &[(chi.clone(), 1)]).unwrap())
        .collect();
    ExperimentConfig::new(x, 59, 60, tg, kvectors, shards).unwrap()
}

fn bench_exec_modes(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment_sweep");
    group.sample_size(20);
    for &x in &[1_000_000u64, 4_000_000] {
        let cfg = config(x, 16);
        let table = SpfTable::new(x);
        group.bench_with_input(BenchmarkId::new("sequential", x), &x, |b, _| {
            b.iter(|| run_accumulate(&cfg, &table, ExecMode::Sequential).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("parallel", x), &x, |b, _| {
            b.iter(|| run_accumulate(&cfg, &table, ExecMode::Parallel).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_exec_modes);
criterion_main!(benches);
