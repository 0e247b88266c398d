//! Parallel-vs-sequential benchmarks for the data-parallel inner loops:
//! multi-token roaming rounds and the synchronous baseline's per-client
//! updates. Results are bit-identical across modes; only wall time differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mtcd_core::data::{generate_synthetic_ridge, partition_even, FeatureDataset};
use mtcd_core::engine::{
    run_mtcd, run_svfl_baseline, ExecMode, RunConfig, StartDistribution, SyncMode,
};
use mtcd_core::graph::{build_topology, ClusterPartition, CommGraph, Topology};
use mtcd_core::metrics::CostModel;
use mtcd_core::objective::GlmSpec;

struct Setup {
    ds: FeatureDataset,
    graph: CommGraph,
    partition: ClusterPartition,
    spec: GlmSpec,
}

fn setup(clients: usize) -> Setup {
    let ds = partition_even(
        &generate_synthetic_ridge(400, 20 * clients, 0).unwrap(),
        clients,
    )
    .unwrap();
    // A path keeps consecutive pairs adjacent, so every two-client cluster
    // induces a connected subgraph.
    let graph = build_topology(Topology::Path, clients).unwrap();
    let clusters: Vec<Vec<usize>> = (0..clients / 2)
        .map(|c| vec![2 * c, 2 * c + 1])
        .collect();
    let partition = ClusterPartition::new(&graph, clusters).unwrap();
    Setup {
        ds,
        graph,
        partition,
        spec: GlmSpec::SquaredL2 { alpha: 10.0 },
    }
}

fn exec_modes() -> Vec<(&'static str, ExecMode)> {
    let mut modes = vec![("sequential", ExecMode::Sequential)];
    if cfg!(feature = "parallel") {
        modes.push(("parallel", ExecMode::Parallel));
    }
    modes
}

fn bench_mtcd_round(c: &mut Criterion) {
    let s = setup(16);
    let mut group = c.benchmark_group("mtcd_round");
    group.sample_size(20);
    for (name, exec) in exec_modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            let mut cfg = RunConfig::new(1e-5, 10, 10, 8, 2);
            cfg.sync_mode = SyncMode::TokenPerCluster;
            cfg.start_distribution = StartDistribution::UniformPerCluster;
            cfg.exec = exec;
            b.iter(|| {
                run_mtcd(
                    &cfg,
                    &s.graph,
                    Some(&s.partition),
                    &s.ds,
                    &s.spec,
                    &CostModel::default(),
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

fn bench_svfl_round(c: &mut Criterion) {
    let s = setup(16);
    let mut group = c.benchmark_group("svfl_round");
    group.sample_size(20);
    for (name, exec) in exec_modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            let mut cfg = RunConfig::new(1e-6, 1, 20, 1, 2);
            cfg.exec = exec;
            b.iter(|| run_svfl_baseline(&cfg, &s.ds, &s.spec, &CostModel::default()).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mtcd_round, bench_svfl_round);
criterion_main!(benches);
