//! Experiment execution: dataset/graph/reference preparation shared across
//! seeds, parallel per-seed runs with deterministic assembly, CSV emission,
//! and the resolved-config and metadata sidecars.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mtcd_core::data::{
    generate_synthetic_ridge, load_svmlight, partition_even, scale_minmax, FeatureDataset,
    LabelMap,
};
use mtcd_core::engine::{
    run_mtcd, run_stcd, run_svfl_baseline, RunConfig, RunResult, SyncToken,
};
use mtcd_core::graph::{build_topology, ClusterPartition, CommGraph};
use mtcd_core::metrics::{
    export_csv, suboptimality, theorem_constants, CostModel, LabeledRun, TheoremConstants,
    WalkDomain,
};
use mtcd_core::objective::{
    evaluate, smoothness_constant, solve_reference, GlmSpec, ModelParams, ReferenceSolution,
};

use crate::config::{AlgorithmKind, DatasetKind, ExperimentConfig, ModelKind, SyncModeKind};

/// Errors split by exit code: configuration problems exit 2, runtime
/// failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

/// Everything shared across the seeds of one experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: FeatureDataset,
    pub graph: CommGraph,
    pub partition: Option<ClusterPartition>,
    pub spec: GlmSpec,
    pub reference: ReferenceSolution,
    pub f_zero: f64,
    pub smoothness_l: f64,
    pub cost: CostModel,
}

pub fn prepare(config: ExperimentConfig) -> Result<Experiment, CliError> {
    let spec = config.glm_spec();
    let raw = match config.dataset.kind {
        DatasetKind::Synthetic => generate_synthetic_ridge(
            config.dataset.n.unwrap_or(0),
            config.dataset.d.unwrap_or(0),
            config.dataset.seed,
        )
        .map_err(|e| CliError::Config(e.to_string()))?,
        DatasetKind::Svmlight => {
            let map = match config.model.kind {
                ModelKind::Ridge => LabelMap::Raw,
                ModelKind::LogisticL1 => LabelMap::Binary,
            };
            load_svmlight(
                config.dataset.path.as_deref().unwrap_or(""),
                config.dataset.expected_features,
                map,
            )
            .map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    let raw = if config.dataset.scale {
        scale_minmax(&raw)
    } else {
        raw
    };
    let dataset = partition_even(&raw, config.graph.clients)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let graph = build_topology(config.topology(), config.graph.clients)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let partition = match &config.graph.clusters {
        Some(clusters) => Some(
            ClusterPartition::new(&graph, clusters.clone())
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        None => None,
    };
    let reference = solve_reference(&spec, &dataset, config.reference.tol)
        .map_err(|e| CliError::Runtime(format!("reference solve: {e}")))?;
    let f_zero = evaluate(&spec, &dataset, &ModelParams::zeros(dataset.block_dims()))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let smoothness_l = smoothness_constant(&spec, &dataset)
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .l;
    let mut cost = CostModel::with_ratio(config.cost.ratio);
    cost.unit_scalars = if config.algorithm.batch_size == 0 {
        dataset.num_samples()
    } else {
        config.algorithm.batch_size
    };
    Ok(Experiment {
        config,
        dataset,
        graph,
        partition,
        spec,
        reference,
        f_zero,
        smoothness_l,
        cost,
    })
}

fn partition_for_engine(
    exp: &Experiment,
    kind: AlgorithmKind,
) -> Option<&ClusterPartition> {
    match (kind, exp.config.algorithm.sync_mode) {
        (AlgorithmKind::Mtcd, SyncModeKind::TokenPerCluster) => exp.partition.as_ref(),
        _ => None,
    }
}

/// Run one seed of the configured algorithm.
pub fn dispatch(
    exp: &Experiment,
    kind: AlgorithmKind,
    rc: &RunConfig,
    cost: &CostModel,
) -> mtcd_core::Result<RunResult> {
    match kind {
        AlgorithmKind::Stcd => run_stcd(rc, &exp.graph, &exp.dataset, &exp.spec, cost),
        AlgorithmKind::Mtcd => run_mtcd(
            rc,
            &exp.graph,
            partition_for_engine(exp, kind),
            &exp.dataset,
            &exp.spec,
            cost,
        ),
        AlgorithmKind::Svfl => run_svfl_baseline(rc, &exp.dataset, &exp.spec, cost),
    }
}

/// Theorem constants for MTCD shapes; other algorithms have no roaming bound.
pub fn constants_for(exp: &Experiment) -> Option<TheoremConstants> {
    if exp.config.algorithm.kind != AlgorithmKind::Mtcd {
        return None;
    }
    let rc = exp.config.run_config(0);
    let domain = match exp.config.algorithm.sync_mode {
        SyncModeKind::TokenPerCluster => WalkDomain::Clusters(exp.partition.as_ref()?),
        SyncModeKind::Overlapping => WalkDomain::Global(&exp.graph),
    };
    let mut tc = theorem_constants(
        exp.smoothness_l,
        exp.config.algorithm.eta,
        rc.hops_per_sync,
        rc.local_updates,
        domain,
        &rc.start_distribution,
    )
    .ok()?;
    tc.delta = Some(exp.f_zero - exp.reference.f_star);
    Some(tc)
}

pub struct SeedOutcome {
    pub seed: u64,
    pub run_id: String,
    pub result: Result<RunResult, String>,
}

fn run_seeds(exp: &Experiment, seeds: &[u64]) -> Vec<SeedOutcome> {
    let one = |&seed: &u64| -> SeedOutcome {
        let rc = exp.config.run_config(seed);
        let kind = exp.config.algorithm.kind;
        SeedOutcome {
            seed,
            run_id: format!("{}-s{}", kind.name(), seed),
            result: dispatch(exp, kind, &rc, &exp.cost).map_err(|e| e.to_string()),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    seeds.iter().map(one).collect()
}

/// Execute inside a dedicated pool when a thread count is requested.
pub fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        return pool.install(f);
    }
    let _ = threads;
    f()
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct MetaDoc {
    experiment: MetaExperiment,
    dataset: MetaDataset,
    graph: MetaGraph,
    reference: MetaReference,
    accounting: MetaAccounting,
    #[serde(skip_serializing_if = "Option::is_none")]
    theorem: Option<MetaTheorem>,
    runs: Vec<MetaRun>,
}

#[derive(Serialize)]
struct MetaExperiment {
    algorithm: String,
    csv: String,
    resolved_config: String,
}

#[derive(Serialize)]
struct MetaDataset {
    samples: usize,
    features: usize,
    blocks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    scaled: bool,
}

#[derive(Serialize)]
struct MetaGraph {
    clients: usize,
    edges: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    resample_attempts: Option<usize>,
}

#[derive(Serialize)]
struct MetaReference {
    f_star: f64,
    certificate: f64,
    iterations: usize,
    tol: f64,
    f_initial: f64,
    delta: f64,
}

#[derive(Serialize)]
struct MetaAccounting {
    sync_variant: String,
    c2s_cost: f64,
    c2c_cost: f64,
    unit_scalars: usize,
    /// Batch-index broadcasts move a negligible payload and are not charged.
    batch_index_messages_charged: bool,
}

#[derive(Serialize)]
struct MetaTheorem {
    variant: String,
    l: f64,
    eta: f64,
    rho: f64,
    p: f64,
    c1: f64,
    c0: f64,
    eta_max: f64,
    eta_within_bound: bool,
    c0_positive: bool,
    delta: f64,
}

#[derive(Serialize)]
struct MetaRun {
    run_id: String,
    seed: u64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    hop_iterations: u64,
    comm_cost: f64,
    max_sync_consistency_error: f64,
    stopped_early: bool,
}

fn write_metadata(
    exp: &Experiment,
    outcomes: &[SeedOutcome],
    csv_path: &Path,
    echo_path: &Path,
    meta_path: &Path,
) -> Result<(), CliError> {
    let sync_variant = match exp.config.algorithm.kind {
        AlgorithmKind::Stcd => "none".to_string(),
        AlgorithmKind::Svfl => "recompute".to_string(),
        AlgorithmKind::Mtcd => match exp.config.resolved_sync_token() {
            SyncToken::Recompute => "recompute".into(),
            SyncToken::Average => "average".into(),
        },
    };
    let doc = MetaDoc {
        experiment: MetaExperiment {
            algorithm: exp.config.algorithm.kind.name().into(),
            csv: csv_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            resolved_config: echo_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        },
        dataset: MetaDataset {
            samples: exp.dataset.num_samples(),
            features: exp.dataset.num_features(),
            blocks: exp.dataset.num_blocks(),
            synthetic_seed: (exp.config.dataset.kind == DatasetKind::Synthetic)
                .then_some(exp.config.dataset.seed),
            path: exp.config.dataset.path.clone(),
            scaled: exp.config.dataset.scale,
        },
        graph: MetaGraph {
            clients: exp.graph.num_clients(),
            edges: exp.graph.edge_count(),
            resample_attempts: exp.graph.resample_attempts(),
        },
        reference: MetaReference {
            f_star: exp.reference.f_star,
            certificate: exp.reference.certificate,
            iterations: exp.reference.iterations,
            tol: exp.config.reference.tol,
            f_initial: exp.f_zero,
            delta: exp.f_zero - exp.reference.f_star,
        },
        accounting: MetaAccounting {
            sync_variant,
            c2s_cost: exp.cost.c2s_cost,
            c2c_cost: exp.cost.c2c_cost,
            unit_scalars: exp.cost.unit_scalars,
            batch_index_messages_charged: false,
        },
        theorem: constants_for(exp).map(|tc| MetaTheorem {
            variant: match tc.variant {
                mtcd_core::metrics::TheoremVariant::TokenPerCluster => "token_per_cluster".into(),
                mtcd_core::metrics::TheoremVariant::Overlapping => "overlapping".into(),
            },
            l: tc.l,
            eta: tc.eta,
            rho: tc.rho,
            p: tc.p,
            c1: tc.c1,
            c0: tc.c0,
            eta_max: tc.eta_max,
            eta_within_bound: tc.eta_within_bound,
            c0_positive: tc.c0_positive,
            delta: tc.delta.unwrap_or(f64::NAN),
        }),
        runs: outcomes
            .iter()
            .map(|o| match &o.result {
                Ok(r) => MetaRun {
                    run_id: o.run_id.clone(),
                    seed: o.seed,
                    status: "ok".into(),
                    error: None,
                    hop_iterations: r.hop_iterations,
                    comm_cost: r.comm_cost,
                    max_sync_consistency_error: r.audit.max_sync_error,
                    stopped_early: r.stopped_early,
                },
                Err(e) => MetaRun {
                    run_id: o.run_id.clone(),
                    seed: o.seed,
                    status: "error".into(),
                    error: Some(e.clone()),
                    hop_iterations: 0,
                    comm_cost: 0.0,
                    max_sync_consistency_error: f64::NAN,
                    stopped_early: false,
                },
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&doc)
        .map_err(|e| CliError::Runtime(format!("metadata serialization: {e}")))?;
    fs::write(meta_path, text).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

/// `run` command: execute every seed, write CSV + resolved config + metadata.
/// Fails with a runtime error if any seed failed (after writing everything).
pub fn cmd_run(config: ExperimentConfig, out_override: Option<PathBuf>) -> Result<(), CliError> {
    let out = out_override.unwrap_or_else(|| PathBuf::from(&config.run.output));
    let threads = config.run.threads;
    let exp = prepare(config)?;
    let outcomes = with_pool(threads, || run_seeds(&exp, &exp.config.run.seeds));

    let labeled: Vec<LabeledRun> = outcomes
        .iter()
        .filter_map(|o| {
            o.result.as_ref().ok().map(|r| LabeledRun {
                run_id: o.run_id.clone(),
                seed: o.seed,
                algorithm: exp.config.algorithm.kind.name().into(),
                f_star: exp.reference.f_star,
                eval_points: r.eval_points.clone(),
            })
        })
        .collect();
    if !labeled.is_empty() {
        let mut file = fs::File::create(&out).map_err(|e| {
            CliError::Runtime(format!("cannot write {}: {e}", out.display()))
        })?;
        export_csv(&labeled, &mut file).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let echo_path = sidecar(&out, "resolved.toml");
    fs::write(&echo_path, exp.config.to_resolved_toml())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let meta_path = sidecar(&out, "meta.toml");
    write_metadata(&exp, &outcomes, &out, &echo_path, &meta_path)?;

    let failures: Vec<&SeedOutcome> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    if !failures.is_empty() {
        let detail: Vec<String> = failures
            .iter()
            .map(|o| format!("seed {}: {}", o.seed, o.result.as_ref().unwrap_err()))
            .collect();
        return Err(CliError::Runtime(format!(
            "{} of {} seeds failed: {}",
            failures.len(),
            outcomes.len(),
            detail.join("; ")
        )));
    }
    println!(
        "wrote {} ({} runs), {}, {}",
        out.display(),
        labeled.len(),
        echo_path.display(),
        meta_path.display()
    );
    Ok(())
}

/// One grid cell of a sweep.
struct SweepCell {
    arm: usize,
    algorithm: AlgorithmKind,
    eta: f64,
    hops: usize,
    tokens: usize,
    ratio: f64,
}

/// `sweep` command: cross product of each arm's step-size/hops/tokens grids
/// with the cost-ratio grid and the seed list. Emits a long-format CSV with
/// a derived cost-to-reach-gap column (-1 when never reached).
pub fn cmd_sweep(config: ExperimentConfig, out_override: Option<PathBuf>) -> Result<(), CliError> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep command needs a [sweep] section".into()))?;
    let out = out_override.unwrap_or_else(|| PathBuf::from(&config.run.output));
    let threads = config.run.threads;
    let exp = prepare(config)?;

    let mut cells = Vec::new();
    for (ai, arm) in sweep.arms.iter().enumerate() {
        let hops_grid = arm
            .hops_grid
            .clone()
            .unwrap_or_else(|| vec![exp.config.algorithm.hops_per_sync]);
        let tokens_grid = arm
            .tokens_grid
            .clone()
            .unwrap_or_else(|| vec![exp.config.algorithm.num_tokens]);
        let (hops_grid, tokens_grid) = match arm.algorithm {
            AlgorithmKind::Svfl => (vec![0], vec![0]),
            _ => (hops_grid, tokens_grid),
        };
        for &eta in &arm.eta_grid {
            for &hops in &hops_grid {
                for &tokens in &tokens_grid {
                    for &ratio in &sweep.cost_ratio_grid {
                        cells.push(SweepCell {
                            arm: ai,
                            algorithm: arm.algorithm,
                            eta,
                            hops,
                            tokens,
                            ratio,
                        });
                    }
                }
            }
        }
    }

    struct Job<'a> {
        cell: &'a SweepCell,
        seed: u64,
        run_id: String,
    }
    let jobs: Vec<Job> = cells
        .iter()
        .flat_map(|cell| {
            exp.config.run.seeds.iter().map(move |&seed| Job {
                cell,
                seed,
                run_id: format!(
                    "{}-a{}e{:e}h{}t{}r{}-s{}",
                    cell.algorithm.name(),
                    cell.arm,
                    cell.eta,
                    cell.hops,
                    cell.tokens,
                    cell.ratio,
                    seed
                ),
            })
        })
        .collect();

    let run_job = |job: &Job| -> (String, u64, Result<RunResult, String>) {
        let mut rc = exp.config.run_config(job.seed);
        rc.eta = job.cell.eta;
        if job.cell.algorithm != AlgorithmKind::Svfl {
            rc.hops_per_sync = job.cell.hops.max(1);
            rc.num_tokens = job.cell.tokens.max(1);
        }
        if job.cell.algorithm == AlgorithmKind::Stcd {
            rc.sync_disabled = true;
            rc.num_tokens = 1;
        } else {
            rc.sync_disabled = false;
        }
        let cost = {
            let mut c = CostModel::with_ratio(job.cell.ratio);
            c.unit_scalars = exp.cost.unit_scalars;
            c
        };
        let result =
            dispatch(&exp, job.cell.algorithm, &rc, &cost).map_err(|e| e.to_string());
        (job.run_id.clone(), job.seed, result)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<(String, u64, Result<RunResult, String>)> = with_pool(threads, || {
        use rayon::prelude::*;
        jobs.par_iter().map(run_job).collect()
    });
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(String, u64, Result<RunResult, String>)> = {
        let _ = threads;
        jobs.iter().map(run_job).collect()
    };

    let mut file = fs::File::create(&out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    writeln!(
        file,
        "run_id,seed,algorithm,eta,hops_per_sync,num_tokens,cost_ratio,round,\
         hop_iterations,comm_cost,f_value,rel_subopt_gap,grad_norm,cost_to_reach_gap"
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut failures = Vec::new();
    for (job, (run_id, seed, result)) in jobs.iter().zip(&results) {
        match result {
            Ok(r) => {
                let reach = r
                    .eval_points
                    .iter()
                    .find(|p| {
                        suboptimality(p.f_value, exp.reference.f_star).value
                            <= sweep.gap_threshold
                    })
                    .map(|p| p.comm_cost)
                    .unwrap_or(-1.0);
                for p in &r.eval_points {
                    let gap = suboptimality(p.f_value, exp.reference.f_star);
                    writeln!(
                        file,
                        "{},{},{},{:.16e},{},{},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        run_id,
                        seed,
                        job.cell.algorithm.name(),
                        job.cell.eta,
                        job.cell.hops,
                        job.cell.tokens,
                        job.cell.ratio,
                        p.round,
                        p.hop_iterations,
                        p.comm_cost,
                        p.f_value,
                        gap.value,
                        p.grad_norm,
                        reach
                    )
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
            Err(e) => failures.push(format!("{run_id}: {e}")),
        }
    }
    drop(file);
    let echo_path = sidecar(&out, "resolved.toml");
    fs::write(&echo_path, exp.config.to_resolved_toml())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let total = results.len();
    let outcomes: Vec<SeedOutcome> = results
        .into_iter()
        .map(|(run_id, seed, result)| SeedOutcome {
            seed,
            run_id,
            result,
        })
        .collect();
    let meta_path = sidecar(&out, "meta.toml");
    write_metadata(&exp, &outcomes, &out, &echo_path, &meta_path)?;
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} sweep runs failed: {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    println!("wrote {} ({} runs)", out.display(), total);
    Ok(())
}
