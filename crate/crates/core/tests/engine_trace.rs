//! Integration checks tying the engine's streaming counters to the metrics
//! layer's trace accounting, and the trace helpers to the lemma probe.

use mtcd_core::data::{generate_synthetic_ridge, partition_even, FeatureDataset};
use mtcd_core::engine::{
    run_mtcd, run_stcd, run_svfl_baseline, EventKind, RunConfig, RunResult, StartDistribution,
    SyncMode, SyncToken, TraceMode,
};
use mtcd_core::graph::{build_topology, ClusterPartition, Topology};
use mtcd_core::metrics::{
    accumulate_cost, lemma_probe_surrogate, visit_sequence, CostModel,
};
use mtcd_core::objective::{smoothness_constant, GlmSpec, ModelParams};

fn ridge_setup(k: usize) -> (FeatureDataset, GlmSpec) {
    let ds = partition_even(&generate_synthetic_ridge(30, 6 * k, 3).unwrap(), k).unwrap();
    (ds, GlmSpec::SquaredL2 { alpha: 1.0 })
}

fn assert_counters_match(res: &RunResult, cost: &CostModel) {
    let points = accumulate_cost(&res.trace, cost);
    assert_eq!(points.len(), res.eval_points.len());
    for (a, b) in points.iter().zip(&res.eval_points) {
        assert_eq!(a.hop_iterations, b.hop_iterations);
        assert!(
            (a.comm_cost - b.comm_cost).abs() <= 1e-9 * a.comm_cost.max(1.0),
            "trace {} vs counter {}",
            a.comm_cost,
            b.comm_cost
        );
        assert_eq!(a.f_value, b.f_value);
        assert_eq!(a.grad_norm, b.grad_norm);
    }
}

#[test]
fn trace_accounting_matches_engine_counters() {
    let cost = CostModel::with_ratio(100.0);

    let (ds, spec) = ridge_setup(4);
    let g = build_topology(Topology::Cycle, 4).unwrap();
    let mut cfg = RunConfig::new(1e-4, 3, 2, 1, 6);
    cfg.trace = TraceMode::Full;
    cfg.master_seed = 17;
    let stcd = run_stcd(&cfg, &g, &ds, &spec, &cost).unwrap();
    assert_counters_match(&stcd, &cost);

    let mut cfg = RunConfig::new(1e-4, 3, 2, 2, 6);
    cfg.trace = TraceMode::Full;
    cfg.sync_token = SyncToken::Average;
    cfg.master_seed = 17;
    let mtcd = run_mtcd(&cfg, &g, None, &ds, &spec, &cost).unwrap();
    assert_counters_match(&mtcd, &cost);

    let mut cfg = RunConfig::new(1e-4, 1, 2, 1, 6);
    cfg.trace = TraceMode::Full;
    let svfl = run_svfl_baseline(&cfg, &ds, &spec, &cost).unwrap();
    assert_counters_match(&svfl, &cost);
}

#[test]
fn sync_message_counts_per_variant() {
    let (ds, spec) = ridge_setup(4);
    let g = build_topology(Topology::Complete, 4).unwrap();
    let cost = CostModel::default();

    let count_messages = |res: &RunResult| -> (usize, usize) {
        let mut up = 0;
        let mut down = 0;
        for e in &res.trace.events {
            match e.kind {
                EventKind::SyncUpload { messages, .. } => up += messages,
                EventKind::SyncDownload { messages, .. } => down += messages,
                _ => {}
            }
        }
        (up, down)
    };

    // Recompute: K uploads + Gamma downloads per round.
    let mut cfg = RunConfig::new(1e-4, 2, 1, 2, 3);
    cfg.trace = TraceMode::Full;
    cfg.sync_token = SyncToken::Recompute;
    let res = run_mtcd(&cfg, &g, None, &ds, &spec, &cost).unwrap();
    assert_eq!(count_messages(&res), (3 * 4, 3 * 2));

    // Average: Gamma uploads + Gamma downloads per round.
    cfg.sync_token = SyncToken::Average;
    let res = run_mtcd(&cfg, &g, None, &ds, &spec, &cost).unwrap();
    assert_eq!(count_messages(&res), (3 * 2, 3 * 2));

    // Baseline: K + K per round.
    let mut cfg = RunConfig::new(1e-4, 1, 1, 1, 3);
    cfg.trace = TraceMode::Full;
    let res = run_svfl_baseline(&cfg, &ds, &spec, &cost).unwrap();
    assert_eq!(count_messages(&res), (3 * 4, 3 * 4));
}

#[test]
fn per_round_event_counts() {
    let (ds, spec) = ridge_setup(6);
    let g = build_topology(Topology::Path, 6).unwrap();
    let part = ClusterPartition::new(&g, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let (s, q, gamma, t) = (4usize, 3usize, 2usize, 5usize);
    let mut cfg = RunConfig::new(1e-4, s, q, gamma, t);
    cfg.sync_mode = SyncMode::TokenPerCluster;
    cfg.start_distribution = StartDistribution::UniformPerCluster;
    cfg.trace = TraceMode::Full;
    let res = run_mtcd(&cfg, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
    for round in 0..t {
        let hops = res
            .trace
            .events
            .iter()
            .filter(|e| e.round == round && matches!(e.kind, EventKind::Hop { .. }))
            .count();
        let steps = res
            .trace
            .events
            .iter()
            .filter(|e| e.round == round && matches!(e.kind, EventKind::LocalStep { .. }))
            .count();
        assert_eq!(hops, gamma * s);
        assert_eq!(steps, gamma * s * q);
    }
    assert_eq!(res.hop_iterations as usize, t * gamma * s);

    // Per-token ordering is monotone in (hop, step).
    for token in 0..gamma {
        let mut last = (0usize, 0usize, 0usize);
        for e in &res.trace.events {
            if let EventKind::LocalStep { token: tk, step, .. } = e.kind {
                if tk == token {
                    let now = (e.round, e.hop, step);
                    assert!(now >= last, "token {token}: {now:?} after {last:?}");
                    last = now;
                }
            }
        }
    }
}

#[test]
fn engine_trace_feeds_the_surrogate_probe() {
    let ds = partition_even(&generate_synthetic_ridge(40, 16, 1).unwrap(), 4).unwrap();
    let spec = GlmSpec::SquaredL2 { alpha: 1.0 };
    let g = build_topology(Topology::Path, 4).unwrap();
    let l = smoothness_constant(&spec, &ds).unwrap().l;
    let (s, q) = (4usize, 3usize);
    let eta = 1.0 / (2.0 * l * s as f64 * q as f64);
    let mut cfg = RunConfig::new(eta, s, q, 1, 2);
    cfg.trace = TraceMode::Full;
    cfg.master_seed = 23;
    let res = run_stcd(&cfg, &g, &ds, &spec, &CostModel::default()).unwrap();
    // Round 0 starts from theta = 0; replay its visit sequence.
    let visits = visit_sequence(&res.trace, 0, 0);
    assert_eq!(visits.len(), s);
    let start = ModelParams::zeros(ds.block_dims());
    let probe = lemma_probe_surrogate(&spec, &ds, &visits, &start, l, eta, q).unwrap();
    assert!(probe.pass, "{probe:?}");
}

#[test]
fn logistic_l1_roaming_approaches_the_reference_optimum() {
    let raw = generate_synthetic_ridge(40, 12, 2).unwrap();
    let labels: Vec<f64> = raw.labels().iter().map(|v| f64::from(*v > 0.0)).collect();
    let ds = partition_even(
        &FeatureDataset::single_block(raw.block(0).clone(), labels).unwrap(),
        4,
    )
    .unwrap();
    let spec = GlmSpec::LogisticL1 { beta: 0.2 };
    let g = build_topology(Topology::Cycle, 4).unwrap();
    let sol = mtcd_core::objective::solve_reference(&spec, &ds, 1e-10).unwrap();
    let l = smoothness_constant(&spec, &ds).unwrap().l;
    let mut cfg = RunConfig::new(1.0 / l, 20, 10, 1, 200);
    cfg.master_seed = 31;
    cfg.early_stop = Some(mtcd_core::engine::EarlyStop {
        f_star: sol.f_star,
        gap_threshold: 1e-4,
    });
    let res = run_stcd(&cfg, &g, &ds, &spec, &CostModel::default()).unwrap();
    assert!(
        res.stopped_early,
        "gap after {} hops: {}",
        res.hop_iterations,
        (res.eval_points.last().unwrap().f_value - sol.f_star) / sol.f_star
    );
    // The proximal steps actually produce sparsity under the L1 weight.
    let zeros = res
        .final_params
        .flatten()
        .iter()
        .filter(|v| **v == 0.0)
        .count();
    assert!(zeros > 0, "no coordinate was thresholded to zero");
}
