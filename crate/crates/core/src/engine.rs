//! Protocol orchestration: single-token roaming (STCD), multi-token rounds
//! with server syncing (MTCD) in the token-per-cluster and overlapping
//! settings, the synchronous full-participation baseline (S-VFL), and the
//! event trace the metrics layer consumes.
//!
//! Determinism contract: every random draw comes from a ChaCha stream keyed
//! by `(master_seed, domain, token index, round)`, so parallel and sequential
//! schedules produce bit-identical traces and parameter trajectories.

use std::borrow::Cow;

use rand_chacha::ChaCha8Rng;

use crate::data::{sample_batch, BatchIndices, FeatureDataset};
use crate::graph::{sample_next, ClusterPartition, CommGraph};
use crate::linalg::Matrix;
use crate::metrics::CostModel;
use crate::objective::{
    cd_step, evaluate, optimality_measure, partial_gradient, prox_l1, GlmSpec, ModelParams,
};
use crate::rngstream::{child_stream, DOMAIN_BATCH, DOMAIN_TOKEN};
use crate::token::{self, Token};
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How the server combines model estimates at a sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    /// Disjoint clusters, one token each; one-hot weights concatenate the
    /// updated blocks.
    TokenPerCluster,
    /// Tokens roam the whole graph; full parameter vectors are averaged with
    /// uniform weights.
    Overlapping,
}

/// How the per-round token is rebuilt at a sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncToken {
    /// Clients upload embeddings; the server recomputes the aggregate from
    /// scratch (K uploads, Gamma downloads).
    Recompute,
    /// Roaming tokens are uploaded and averaged (Gamma uploads, Gamma
    /// downloads). Only consistent with overlapping full-batch runs.
    Average,
}

/// Where each token starts a roaming segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartDistribution {
    UniformAllClients,
    UniformPerCluster,
    /// Fixed start per token; entry `gamma` is the start of token `gamma`.
    FixedClient(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSpec {
    Full,
    Mini(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Roam tokens of a round on the rayon pool. Falls back to sequential
    /// when the `parallel` feature is off. Results are identical either way.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Record every hop and local step. Memory grows with hops x Q.
    Full,
    /// Record only sync and eval events; counters still accumulate.
    EvalOnly,
}

/// Token-consistency auditing level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditMode {
    Off,
    /// Compare each roamed token against a from-scratch recompute at every
    /// sync boundary.
    Syncs,
    /// Additionally compare after every local step.
    EveryStep,
}

/// Stop a run once the relative suboptimality gap falls below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub f_star: f64,
    pub gap_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub eta: f64,
    /// Hops per roaming segment (S).
    pub hops_per_sync: usize,
    /// Local CD steps per visit (Q).
    pub local_updates: usize,
    /// Number of tokens (Gamma).
    pub num_tokens: usize,
    /// Rounds (T); for sync-disabled runs these are eval segments.
    pub rounds: usize,
    pub batch: BatchSpec,
    pub sync_mode: SyncMode,
    pub sync_token: SyncToken,
    /// No server contact at all (the S -> infinity limit); requires a single
    /// token roaming the connected global graph.
    pub sync_disabled: bool,
    pub start_distribution: StartDistribution,
    pub master_seed: u64,
    /// Evaluate the objective every this many rounds.
    pub eval_every: usize,
    /// Test hook: force every token onto the same per-round hop stream.
    pub shared_token_streams: bool,
    pub exec: ExecMode,
    pub trace: TraceMode,
    pub audit: AuditMode,
    /// Record the full objective after every local step (full batch only).
    pub audit_objective: bool,
    pub early_stop: Option<EarlyStop>,
}

impl RunConfig {
    pub fn new(eta: f64, hops_per_sync: usize, local_updates: usize, num_tokens: usize, rounds: usize) -> Self {
        RunConfig {
            eta,
            hops_per_sync,
            local_updates,
            num_tokens,
            rounds,
            batch: BatchSpec::Full,
            sync_mode: SyncMode::Overlapping,
            sync_token: SyncToken::Recompute,
            sync_disabled: false,
            start_distribution: StartDistribution::UniformAllClients,
            master_seed: 0,
            eval_every: 1,
            shared_token_streams: false,
            exec: ExecMode::Parallel,
            trace: TraceMode::EvalOnly,
            audit: AuditMode::Off,
            audit_objective: false,
            early_stop: None,
        }
    }
}

/// Protocol events in trace order.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Hop {
        token: usize,
        from: usize,
        to: usize,
    },
    LocalStep {
        token: usize,
        client: usize,
        step: usize,
    },
    SyncUpload {
        messages: usize,
        unit_scalars: usize,
    },
    SyncDownload {
        messages: usize,
        unit_scalars: usize,
    },
    Eval {
        f_value: f64,
        grad_norm: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub round: usize,
    pub hop: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub events: Vec<Event>,
}

/// One roaming model copy: token `index` plus its params and position.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub index: usize,
    pub params: ModelParams,
    pub token: Token,
    pub current_client: usize,
}

/// Roaming domain of one token: the whole graph or one cluster's induced
/// subgraph (walked in local ids, reported in global ids).
#[derive(Debug, Clone, Copy)]
pub enum RoamDomain<'a> {
    Global(&'a CommGraph),
    Cluster {
        partition: &'a ClusterPartition,
        cluster: usize,
    },
}

impl RoamDomain<'_> {
    fn sample_next(&self, client: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
        match self {
            RoamDomain::Global(g) => sample_next(g, client, rng),
            RoamDomain::Cluster { partition, cluster } => {
                let local = partition.local_index(client);
                let next = sample_next(partition.subgraph(*cluster), local, rng)?;
                Ok(partition.cluster(*cluster)[next])
            }
        }
    }

    fn draw_start(
        &self,
        start: &StartDistribution,
        token: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        use rand::Rng;
        match (start, self) {
            (StartDistribution::UniformAllClients, RoamDomain::Global(g)) => {
                Ok(rng.gen_range(0..g.num_clients()))
            }
            (StartDistribution::UniformPerCluster, RoamDomain::Cluster { partition, cluster }) => {
                let members = partition.cluster(*cluster);
                Ok(members[rng.gen_range(0..members.len())])
            }
            (StartDistribution::FixedClient(list), _) => {
                list.get(token).copied().ok_or_else(|| {
                    Error::InvalidConfig(format!("no fixed start for token {token}"))
                })
            }
            _ => Err(Error::InvalidConfig(
                "start distribution does not match the roaming domain".into(),
            )),
        }
    }
}

/// Cumulative counters and eval snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub round: usize,
    pub hop_iterations: u64,
    pub comm_cost: f64,
    pub f_value: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub max_step_error: f64,
    pub max_sync_error: f64,
    pub step_checks: usize,
    pub sync_checks: usize,
}

impl AuditReport {
    fn absorb_sync(&mut self, err: f64) {
        self.max_sync_error = self.max_sync_error.max(err);
        self.sync_checks += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub eval_points: Vec<EvalPoint>,
    pub trace: EventTrace,
    pub final_params: ModelParams,
    pub f_initial: f64,
    pub hop_iterations: u64,
    pub comm_cost: f64,
    /// Token rebuild variant actually used (None when sync is disabled).
    pub sync_token_used: Option<SyncToken>,
    pub audit: AuditReport,
    /// Objective after every local step, in trace order (audit_objective).
    pub step_objectives: Vec<f64>,
    pub stopped_early: bool,
}

/// Rows of every block restricted to the active batch (borrowed when the
/// batch is full).
struct ActiveData<'a> {
    blocks: Vec<Cow<'a, Matrix>>,
    labels: Cow<'a, [f64]>,
}

impl<'a> ActiveData<'a> {
    fn new(ds: &'a FeatureDataset, batch: &BatchIndices) -> Result<Self> {
        if batch.is_full() {
            Ok(ActiveData {
                blocks: (0..ds.num_blocks())
                    .map(|k| Cow::Borrowed(ds.block(k)))
                    .collect(),
                labels: Cow::Borrowed(ds.labels()),
            })
        } else {
            let idx = batch.indices();
            let blocks = (0..ds.num_blocks())
                .map(|k| ds.block(k).select_rows(idx).map(Cow::Owned))
                .collect::<Result<Vec<_>>>()?;
            let labels = idx.iter().map(|&i| ds.labels()[i]).collect::<Vec<f64>>();
            Ok(ActiveData {
                blocks,
                labels: Cow::Owned(labels),
            })
        }
    }

    fn block(&self, k: usize) -> &Matrix {
        &self.blocks[k]
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }
}

/// Shared per-round context for roaming segments.
struct SegCtx<'a> {
    spec: &'a GlmSpec,
    ds: &'a FeatureDataset,
    active: &'a ActiveData<'a>,
    eta: f64,
    hops: usize,
    local_updates: usize,
    loss_scale: f64,
    round: usize,
    record_events: bool,
    audit: AuditMode,
    record_objective: bool,
}

/// Per-segment output merged deterministically by the driver.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub events: Vec<Event>,
    pub hops: u64,
    pub max_step_error: f64,
    pub step_checks: usize,
    pub step_objectives: Vec<f64>,
}

/// One local CD step at block `k`: token-based partial gradient, gradient
/// step, prox for the L1 part, then the exact token shift. Shared by every
/// driver so that structurally equivalent protocols match bit for bit.
#[allow(clippy::too_many_arguments)]
fn local_step(
    spec: &GlmSpec,
    xk: &Matrix,
    labels: &[f64],
    loss_scale: f64,
    eta: f64,
    params: &mut ModelParams,
    tok: &mut Token,
    k: usize,
) -> Result<()> {
    let grad = partial_gradient(spec, xk, tok.z(), params.block(k), labels, loss_scale)?;
    let old = params.block(k).to_vec();
    let mut new = cd_step(&old, &grad, eta);
    let l1 = spec.l1_weight();
    if l1 > 0.0 {
        new = prox_l1(&new, eta * l1);
    }
    tok.apply_block_delta(xk, &old, &new)?;
    params.set_block(k, new);
    Ok(())
}

fn roam_with(
    est: &mut ModelEstimate,
    domain: &RoamDomain,
    ctx: &SegCtx,
    dispatch: Option<&StartDistribution>,
    rng: &mut ChaCha8Rng,
) -> Result<SegmentOutput> {
    let mut out = SegmentOutput {
        events: Vec::new(),
        hops: 0,
        max_step_error: 0.0,
        step_checks: 0,
        step_objectives: Vec::new(),
    };
    if let Some(start) = dispatch {
        est.current_client = domain.draw_start(start, est.index, rng)?;
    }
    for hop in 0..ctx.hops {
        let client = est.current_client;
        for step in 0..ctx.local_updates {
            local_step(
                ctx.spec,
                ctx.active.block(client),
                ctx.active.labels(),
                ctx.loss_scale,
                ctx.eta,
                &mut est.params,
                &mut est.token,
                client,
            )?;
            if ctx.record_events {
                out.events.push(Event {
                    round: ctx.round,
                    hop,
                    kind: EventKind::LocalStep {
                        token: est.index,
                        client,
                        step,
                    },
                });
            }
            if ctx.audit == AuditMode::EveryStep {
                let err = token::consistency_error(&est.token, ctx.ds, &est.params)?;
                out.max_step_error = out.max_step_error.max(err);
                out.step_checks += 1;
            }
            if ctx.record_objective {
                out.step_objectives
                    .push(evaluate(ctx.spec, ctx.ds, &est.params)?);
            }
        }
        let next = domain.sample_next(client, rng)?;
        if ctx.record_events {
            out.events.push(Event {
                round: ctx.round,
                hop,
                kind: EventKind::Hop {
                    token: est.index,
                    from: client,
                    to: next,
                },
            });
        }
        est.current_client = next;
        out.hops += 1;
    }
    Ok(out)
}

/// Settings for driving one roaming segment directly (outside a full run).
pub struct RoamSettings<'a> {
    pub spec: &'a GlmSpec,
    pub dataset: &'a FeatureDataset,
    pub batch: &'a BatchIndices,
    pub eta: f64,
    pub hops: usize,
    pub local_updates: usize,
    pub loss_scale: f64,
    pub round: usize,
    /// `Some` draws a fresh start client before the first hop.
    pub dispatch: Option<&'a StartDistribution>,
    pub record_events: bool,
    pub audit: AuditMode,
    pub record_objective: bool,
}

/// Execute one roaming segment: at each of `hops` visits, perform
/// `local_updates` CD steps on the visited block, shift the token, then hop
/// to a uniform member of the closed neighborhood.
pub fn token_roaming(
    est: &mut ModelEstimate,
    domain: &RoamDomain,
    settings: &RoamSettings,
    rng: &mut ChaCha8Rng,
) -> Result<SegmentOutput> {
    if !settings.eta.is_finite() || settings.eta < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "step size {} must be finite and nonnegative",
            settings.eta
        )));
    }
    let active = ActiveData::new(settings.dataset, settings.batch)?;
    let ctx = SegCtx {
        spec: settings.spec,
        ds: settings.dataset,
        active: &active,
        eta: settings.eta,
        hops: settings.hops,
        local_updates: settings.local_updates,
        loss_scale: settings.loss_scale,
        round: settings.round,
        record_events: settings.record_events,
        audit: settings.audit,
        record_objective: settings.record_objective,
    };
    roam_with(est, domain, &ctx, settings.dispatch, rng)
}

/// Combine model estimates with per-client weight vectors on the
/// Gamma-simplex: `theta_k = sum_gamma w[k][gamma] * theta_k(gamma)`.
/// Fusion parameters, when present, are combined with uniform weights.
pub fn sync_combine(estimates: &[ModelEstimate], weights: &[Vec<f64>]) -> Result<ModelParams> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InvalidInput("no estimates to combine".into()))?;
    let blocks = first.params.num_blocks();
    if weights.len() != blocks {
        return Err(Error::ShapeMismatch(format!(
            "{} weight vectors for {} blocks",
            weights.len(),
            blocks
        )));
    }
    for (k, w) in weights.iter().enumerate() {
        if w.len() != estimates.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight vector {k} has {} entries for {} estimates",
                w.len(),
                estimates.len()
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || w.iter().any(|&x| x < -1e-12) {
            return Err(Error::WeightsOffSimplex(format!(
                "client {k}: weights {w:?} sum to {sum}"
            )));
        }
    }
    let dims: Vec<usize> = first.params.block_dims();
    let mut combined = ModelParams::zeros(&dims);
    for k in 0..blocks {
        let mut acc = vec![0.0; dims[k]];
        for (gamma, est) in estimates.iter().enumerate() {
            let w = weights[k][gamma];
            if w == 0.0 {
                continue;
            }
            if w == 1.0 {
                // Exact block copy keeps one-hot syncing bit-faithful.
                acc.copy_from_slice(est.params.block(k));
            } else {
                crate::linalg::axpy(w, est.params.block(k), &mut acc);
            }
        }
        combined.set_block(k, acc);
    }
    Ok(combined)
}

fn token_stream(cfg: &RunConfig, round: usize, token: usize) -> ChaCha8Rng {
    let idx = if cfg.shared_token_streams { 0 } else { token as u64 };
    child_stream(cfg.master_seed, DOMAIN_TOKEN, idx, round as u64)
}

fn validate_common(cfg: &RunConfig, ds: &FeatureDataset) -> Result<()> {
    if !cfg.eta.is_finite() || cfg.eta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "step size {} must be finite and positive",
            cfg.eta
        )));
    }
    if cfg.hops_per_sync == 0
        || cfg.local_updates == 0
        || cfg.num_tokens == 0
        || cfg.rounds == 0
        || cfg.eval_every == 0
    {
        return Err(Error::InvalidConfig(
            "hops, local updates, tokens, rounds, and eval stride must all be at least 1".into(),
        ));
    }
    if let BatchSpec::Mini(b) = cfg.batch {
        if b == 0 || b > ds.num_samples() {
            return Err(Error::BatchSize {
                batch: b,
                samples: ds.num_samples(),
            });
        }
    }
    if cfg.audit_objective && cfg.batch != BatchSpec::Full {
        return Err(Error::InvalidConfig(
            "per-step objective recording needs full batches".into(),
        ));
    }
    Ok(())
}

fn round_batch(cfg: &RunConfig, n: usize, round: usize) -> Result<BatchIndices> {
    match cfg.batch {
        BatchSpec::Full => Ok(BatchIndices::full(n)),
        BatchSpec::Mini(b) => {
            let mut rng = child_stream(cfg.master_seed, DOMAIN_BATCH, 0, round as u64);
            sample_batch(n, b, &mut rng)
        }
    }
}

fn loss_scale(cfg: &RunConfig, n: usize, batch: &BatchIndices) -> f64 {
    match cfg.batch {
        BatchSpec::Full => 1.0,
        BatchSpec::Mini(_) => n as f64 / batch.len() as f64,
    }
}

struct Recorder {
    trace: EventTrace,
    trace_full: bool,
    hop_iterations: u64,
    comm_cost: f64,
    eval_points: Vec<EvalPoint>,
    audit: AuditReport,
    step_objectives: Vec<f64>,
}

impl Recorder {
    fn new(trace_full: bool) -> Self {
        Recorder {
            trace: EventTrace::default(),
            trace_full,
            hop_iterations: 0,
            comm_cost: 0.0,
            eval_points: Vec::new(),
            audit: AuditReport::default(),
            step_objectives: Vec::new(),
        }
    }

    fn sync_events(&mut self, round: usize, uploads: usize, downloads: usize, unit: usize, cost: &CostModel) {
        self.trace.events.push(Event {
            round,
            hop: 0,
            kind: EventKind::SyncUpload {
                messages: uploads,
                unit_scalars: unit,
            },
        });
        self.trace.events.push(Event {
            round,
            hop: 0,
            kind: EventKind::SyncDownload {
                messages: downloads,
                unit_scalars: unit,
            },
        });
        self.comm_cost += cost.c2s_cost * (uploads + downloads) as f64;
    }

    fn absorb_segment(&mut self, seg: SegmentOutput, cost: &CostModel) {
        self.hop_iterations += seg.hops;
        self.comm_cost += cost.c2c_cost * seg.hops as f64;
        if self.trace_full {
            self.trace.events.extend(seg.events);
        }
        if seg.step_checks > 0 {
            self.audit.max_step_error = self.audit.max_step_error.max(seg.max_step_error);
            self.audit.step_checks += seg.step_checks;
        }
        self.step_objectives.extend(seg.step_objectives);
    }

    fn eval(
        &mut self,
        round: usize,
        hop: usize,
        spec: &GlmSpec,
        ds: &FeatureDataset,
        params: &ModelParams,
        stop: &Option<EarlyStop>,
    ) -> Result<bool> {
        let f_value = evaluate(spec, ds, params)?;
        let grad_norm = optimality_measure(spec, ds, params)?;
        self.trace.events.push(Event {
            round,
            hop,
            kind: EventKind::Eval { f_value, grad_norm },
        });
        self.eval_points.push(EvalPoint {
            round,
            hop_iterations: self.hop_iterations,
            comm_cost: self.comm_cost,
            f_value,
            grad_norm,
        });
        if let Some(es) = stop {
            if es.f_star > 0.0 && (f_value - es.f_star) / es.f_star <= es.gap_threshold {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

fn roam_round(
    cfg: &RunConfig,
    estimates: &mut [ModelEstimate],
    domains: &[RoamDomain],
    ctx: &SegCtx,
    dispatch: Option<&StartDistribution>,
) -> Result<Vec<SegmentOutput>> {
    let run_one = |est: &mut ModelEstimate, domain: &RoamDomain| -> Result<SegmentOutput> {
        let mut rng = token_stream(cfg, ctx.round, est.index);
        roam_with(est, domain, ctx, dispatch, &mut rng)
    };
    #[cfg(feature = "parallel")]
    if cfg.exec == ExecMode::Parallel {
        return estimates
            .par_iter_mut()
            .zip(domains.par_iter())
            .map(|(est, domain)| run_one(est, domain))
            .collect();
    }
    estimates
        .iter_mut()
        .zip(domains)
        .map(|(est, domain)| run_one(est, domain))
        .collect()
}

/// Run MTCD (or, with `sync_disabled`, continuous single-token roaming).
///
/// Per round: rebuild the token (charged per the sync variant), dispatch the
/// tokens to their start clients, roam them in isolation, combine the model
/// estimates with the mode's weights, and evaluate on the configured stride.
pub fn run_mtcd(
    cfg: &RunConfig,
    graph: &CommGraph,
    partition: Option<&ClusterPartition>,
    ds: &FeatureDataset,
    spec: &GlmSpec,
    cost: &CostModel,
) -> Result<RunResult> {
    validate_common(cfg, ds)?;
    spec.validate()?;
    let k = graph.num_clients();
    if k != ds.num_blocks() {
        return Err(Error::InvalidConfig(format!(
            "{k} clients but {} feature blocks",
            ds.num_blocks()
        )));
    }
    let n = ds.num_samples();
    let gamma = cfg.num_tokens;

    if cfg.sync_disabled {
        if gamma != 1 {
            return Err(Error::InvalidConfig(
                "sync-disabled roaming uses exactly one token".into(),
            ));
        }
        if cfg.batch != BatchSpec::Full {
            return Err(Error::InvalidConfig(
                "mini-batches need server syncs to refresh the batch".into(),
            ));
        }
        if partition.is_some() {
            return Err(Error::InvalidConfig(
                "sync-disabled roaming ignores cluster partitions; pass none".into(),
            ));
        }
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        return run_continuous(cfg, graph, ds, spec, cost);
    }

    // Mode-specific validation and domain setup.
    let domains: Vec<RoamDomain> = match cfg.sync_mode {
        SyncMode::TokenPerCluster => {
            let part = partition.ok_or_else(|| {
                Error::InvalidConfig("token-per-cluster runs need a cluster partition".into())
            })?;
            if part.num_clusters() != gamma {
                return Err(Error::InvalidConfig(format!(
                    "{gamma} tokens but {} clusters",
                    part.num_clusters()
                )));
            }
            if part.num_clients() != k {
                return Err(Error::PartitionInvalid(format!(
                    "partition covers {} clients, graph has {k}",
                    part.num_clients()
                )));
            }
            for c in 0..part.num_clusters() {
                if !part.subgraph(c).is_connected() {
                    return Err(Error::ClusterDisconnected(c));
                }
            }
            match &cfg.start_distribution {
                StartDistribution::UniformPerCluster => {}
                StartDistribution::FixedClient(list) => {
                    if list.len() != gamma {
                        return Err(Error::InvalidConfig(format!(
                            "{} fixed starts for {gamma} tokens",
                            list.len()
                        )));
                    }
                    for (g, &c) in list.iter().enumerate() {
                        if c >= k || part.cluster_of(c) != g {
                            return Err(Error::InvalidConfig(format!(
                                "fixed start {c} is not in cluster {g}"
                            )));
                        }
                    }
                }
                StartDistribution::UniformAllClients => {
                    return Err(Error::InvalidConfig(
                        "token-per-cluster tokens must start inside their cluster".into(),
                    ));
                }
            }
            if cfg.sync_token == SyncToken::Average {
                return Err(Error::InvalidConfig(
                    "averaging tokens is inconsistent with one-hot block syncing; use recompute"
                        .into(),
                ));
            }
            (0..gamma)
                .map(|c| RoamDomain::Cluster {
                    partition: part,
                    cluster: c,
                })
                .collect()
        }
        SyncMode::Overlapping => {
            if partition.is_some() {
                return Err(Error::InvalidConfig(
                    "overlapping tokens roam the whole graph; pass no partition".into(),
                ));
            }
            if !graph.is_connected() {
                return Err(Error::Disconnected);
            }
            match &cfg.start_distribution {
                StartDistribution::UniformAllClients => {}
                StartDistribution::FixedClient(list) => {
                    if list.len() != gamma || list.iter().any(|&c| c >= k) {
                        return Err(Error::InvalidConfig(
                            "fixed starts must name one valid client per token".into(),
                        ));
                    }
                }
                StartDistribution::UniformPerCluster => {
                    return Err(Error::InvalidConfig(
                        "per-cluster starts need the token-per-cluster mode".into(),
                    ));
                }
            }
            if cfg.sync_token == SyncToken::Average && cfg.batch != BatchSpec::Full {
                return Err(Error::InvalidConfig(
                    "mini-batch rounds must recompute the token for the fresh batch".into(),
                ));
            }
            (0..gamma).map(|_| RoamDomain::Global(graph)).collect()
        }
    };

    let dims = ds.block_dims().to_vec();
    let mut synced = ModelParams::zeros(&dims);
    let f_initial = evaluate(spec, ds, &synced)?;
    let mut rec = Recorder::new(cfg.trace == TraceMode::Full);
    let weights = build_weights(cfg.sync_mode, partition, k, gamma);
    let mut prev_tokens: Option<Vec<Token>> = None;
    let mut stopped_early = false;

    for t in 0..cfg.rounds {
        let batch = round_batch(cfg, n, t)?;
        let scale = loss_scale(cfg, n, &batch);
        let active = ActiveData::new(ds, &batch)?;
        let (token_t, uploads) = match cfg.sync_token {
            SyncToken::Recompute => (token::recompute(ds, &synced, &batch)?, k),
            SyncToken::Average => {
                let tok = match &prev_tokens {
                    None => Token::init_zero(n)?,
                    Some(toks) => token::average(toks)?,
                };
                (tok, gamma)
            }
        };
        if cfg.audit != AuditMode::Off {
            rec.audit
                .absorb_sync(token::consistency_error(&token_t, ds, &synced)?);
        }
        rec.sync_events(t, uploads, gamma, batch.len(), cost);

        let mut estimates: Vec<ModelEstimate> = (0..gamma)
            .map(|g| ModelEstimate {
                index: g,
                params: synced.clone(),
                token: token_t.clone(),
                current_client: 0,
            })
            .collect();
        let ctx = SegCtx {
            spec,
            ds,
            active: &active,
            eta: cfg.eta,
            hops: cfg.hops_per_sync,
            local_updates: cfg.local_updates,
            loss_scale: scale,
            round: t,
            record_events: cfg.trace == TraceMode::Full,
            audit: cfg.audit,
            record_objective: cfg.audit_objective,
        };
        let outs = roam_round(cfg, &mut estimates, &domains, &ctx, Some(&cfg.start_distribution))?;
        for out in outs {
            rec.absorb_segment(out, cost);
        }
        if cfg.audit != AuditMode::Off {
            for est in &estimates {
                rec.audit
                    .absorb_sync(token::consistency_error(&est.token, ds, &est.params)?);
            }
        }
        synced = sync_combine(&estimates, &weights)?;
        if cfg.sync_token == SyncToken::Average {
            prev_tokens = Some(estimates.into_iter().map(|e| e.token).collect());
        }
        if (t + 1) % cfg.eval_every == 0 {
            let stop = rec.eval(t, cfg.hops_per_sync, spec, ds, &synced, &cfg.early_stop)?;
            if stop {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(RunResult {
        eval_points: rec.eval_points,
        trace: rec.trace,
        final_params: synced,
        f_initial,
        hop_iterations: rec.hop_iterations,
        comm_cost: rec.comm_cost,
        sync_token_used: Some(cfg.sync_token),
        audit: rec.audit,
        step_objectives: rec.step_objectives,
        stopped_early,
    })
}

/// Continuous roaming without server contact (STCD; the S -> infinity limit).
fn run_continuous(
    cfg: &RunConfig,
    graph: &CommGraph,
    ds: &FeatureDataset,
    spec: &GlmSpec,
    cost: &CostModel,
) -> Result<RunResult> {
    let n = ds.num_samples();
    let dims = ds.block_dims().to_vec();
    let params = ModelParams::zeros(&dims);
    let f_initial = evaluate(spec, ds, &params)?;
    let mut rec = Recorder::new(cfg.trace == TraceMode::Full);
    let mut est = ModelEstimate {
        index: 0,
        params,
        token: Token::init_zero(n)?,
        current_client: 0,
    };
    let batch = BatchIndices::full(n);
    let active = ActiveData::new(ds, &batch)?;
    let mut stopped_early = false;
    for t in 0..cfg.rounds {
        let ctx = SegCtx {
            spec,
            ds,
            active: &active,
            eta: cfg.eta,
            hops: cfg.hops_per_sync,
            local_updates: cfg.local_updates,
            loss_scale: 1.0,
            round: t,
            record_events: cfg.trace == TraceMode::Full,
            audit: cfg.audit,
            record_objective: cfg.audit_objective,
        };
        let dispatch = (t == 0).then_some(&cfg.start_distribution);
        let mut rng = token_stream(cfg, t, 0);
        let out = roam_with(&mut est, &RoamDomain::Global(graph), &ctx, dispatch, &mut rng)?;
        rec.absorb_segment(out, cost);
        if cfg.audit != AuditMode::Off {
            rec.audit
                .absorb_sync(token::consistency_error(&est.token, ds, &est.params)?);
        }
        if (t + 1) % cfg.eval_every == 0 {
            let stop = rec.eval(t, cfg.hops_per_sync, spec, ds, &est.params, &cfg.early_stop)?;
            if stop {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(RunResult {
        eval_points: rec.eval_points,
        trace: rec.trace,
        final_params: est.params,
        f_initial,
        hop_iterations: rec.hop_iterations,
        comm_cost: rec.comm_cost,
        sync_token_used: None,
        audit: rec.audit,
        step_objectives: rec.step_objectives,
        stopped_early,
    })
}

/// Single-token coordinate descent: one token roaming a connected graph with
/// no server contact. Equivalent to [`run_mtcd`] with one token and syncs
/// disabled; implemented as exactly that.
pub fn run_stcd(
    cfg: &RunConfig,
    graph: &CommGraph,
    ds: &FeatureDataset,
    spec: &GlmSpec,
    cost: &CostModel,
) -> Result<RunResult> {
    if cfg.num_tokens != 1 {
        return Err(Error::InvalidConfig(
            "single-token roaming uses exactly one token".into(),
        ));
    }
    let mut cfg = cfg.clone();
    cfg.sync_disabled = true;
    cfg.sync_mode = SyncMode::Overlapping;
    run_mtcd(&cfg, graph, None, ds, spec, cost)
}

/// Synchronous full-participation baseline: every round, all K clients take
/// Q local steps against the round-start token (fresh own-block information,
/// stale off-block information), then the server recomputes the token.
/// Costs K uploads + K downloads per round and no client-to-client hops.
pub fn run_svfl_baseline(
    cfg: &RunConfig,
    ds: &FeatureDataset,
    spec: &GlmSpec,
    cost: &CostModel,
) -> Result<RunResult> {
    validate_common(cfg, ds)?;
    spec.validate()?;
    let n = ds.num_samples();
    let k = ds.num_blocks();
    let dims = ds.block_dims().to_vec();
    let mut synced = ModelParams::zeros(&dims);
    let f_initial = evaluate(spec, ds, &synced)?;
    let mut rec = Recorder::new(cfg.trace == TraceMode::Full);
    let mut stopped_early = false;

    for t in 0..cfg.rounds {
        let batch = round_batch(cfg, n, t)?;
        let scale = loss_scale(cfg, n, &batch);
        let active = ActiveData::new(ds, &batch)?;
        let token_t = token::recompute(ds, &synced, &batch)?;
        rec.sync_events(t, k, k, batch.len(), cost);

        let run_client = |client: usize| -> Result<(ModelEstimate, SegmentOutput)> {
            let mut est = ModelEstimate {
                index: client,
                params: synced.clone(),
                token: token_t.clone(),
                current_client: client,
            };
            let mut out = SegmentOutput {
                events: Vec::new(),
                hops: 0,
                max_step_error: 0.0,
                step_checks: 0,
                step_objectives: Vec::new(),
            };
            for step in 0..cfg.local_updates {
                local_step(
                    spec,
                    active.block(client),
                    active.labels(),
                    scale,
                    cfg.eta,
                    &mut est.params,
                    &mut est.token,
                    client,
                )?;
                if cfg.trace == TraceMode::Full {
                    out.events.push(Event {
                        round: t,
                        hop: 0,
                        kind: EventKind::LocalStep {
                            token: client,
                            client,
                            step,
                        },
                    });
                }
                if cfg.audit == AuditMode::EveryStep {
                    let err = token::consistency_error(&est.token, ds, &est.params)?;
                    out.max_step_error = out.max_step_error.max(err);
                    out.step_checks += 1;
                }
                if cfg.audit_objective {
                    out.step_objectives.push(evaluate(spec, ds, &est.params)?);
                }
            }
            Ok((est, out))
        };

        #[cfg(feature = "parallel")]
        let results: Vec<(ModelEstimate, SegmentOutput)> = if cfg.exec == ExecMode::Parallel {
            (0..k).into_par_iter().map(run_client).collect::<Result<_>>()?
        } else {
            (0..k).map(run_client).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<(ModelEstimate, SegmentOutput)> =
            (0..k).map(run_client).collect::<Result<_>>()?;

        for (client, (est, out)) in results.into_iter().enumerate() {
            rec.absorb_segment(out, cost);
            if cfg.audit != AuditMode::Off {
                rec.audit
                    .absorb_sync(token::consistency_error(&est.token, ds, &est.params)?);
            }
            synced.set_block(client, est.params.block(client).to_vec());
        }
        if (t + 1) % cfg.eval_every == 0 {
            let stop = rec.eval(t, 0, spec, ds, &synced, &cfg.early_stop)?;
            if stop {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(RunResult {
        eval_points: rec.eval_points,
        trace: rec.trace,
        final_params: synced,
        f_initial,
        hop_iterations: rec.hop_iterations,
        comm_cost: rec.comm_cost,
        sync_token_used: Some(SyncToken::Recompute),
        audit: rec.audit,
        step_objectives: rec.step_objectives,
        stopped_early,
    })
}

fn build_weights(
    mode: SyncMode,
    partition: Option<&ClusterPartition>,
    clients: usize,
    gamma: usize,
) -> Vec<Vec<f64>> {
    match mode {
        SyncMode::TokenPerCluster => {
            let part = partition.expect("validated");
            (0..clients)
                .map(|k| {
                    let mut w = vec![0.0; gamma];
                    w[part.cluster_of(k)] = 1.0;
                    w
                })
                .collect()
        }
        SyncMode::Overlapping => vec![vec![1.0 / gamma as f64; gamma]; clients],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_ridge, partition_even};
    use crate::graph::{build_topology, Topology};
    use crate::objective::smoothness_constant;

    fn ridge_setup(
        n: usize,
        d: usize,
        k: usize,
        seed: u64,
    ) -> (FeatureDataset, CommGraph, GlmSpec) {
        let ds = partition_even(&generate_synthetic_ridge(n, d, seed).unwrap(), k).unwrap();
        let g = build_topology(Topology::Path, k).unwrap();
        (ds, g, GlmSpec::SquaredL2 { alpha: 1.0 })
    }

    fn full_audit(cfg: &mut RunConfig) {
        cfg.trace = TraceMode::Full;
        cfg.audit = AuditMode::EveryStep;
    }

    #[test]
    fn degenerate_single_client_roaming() {
        let ds = generate_synthetic_ridge(6, 4, 0).unwrap();
        let g = build_topology(Topology::Complete, 1).unwrap();
        let spec = GlmSpec::SquaredL2 { alpha: 0.5 };
        let mut est = ModelEstimate {
            index: 0,
            params: ModelParams::zeros(&[4]),
            token: Token::init_zero(6).unwrap(),
            current_client: 0,
        };
        let batch = BatchIndices::full(6);
        let settings = RoamSettings {
            spec: &spec,
            dataset: &ds,
            batch: &batch,
            eta: 0.01,
            hops: 1,
            local_updates: 1,
            loss_scale: 1.0,
            round: 0,
            dispatch: None,
            record_events: true,
            audit: AuditMode::EveryStep,
            record_objective: false,
        };
        let mut rng = token_stream(&RunConfig::new(0.01, 1, 1, 1, 1), 0, 0);
        let out = token_roaming(&mut est, &RoamDomain::Global(&g), &settings, &mut rng).unwrap();
        assert_eq!(out.hops, 1);
        assert_eq!(out.events.len(), 2); // one local step + one hop
        assert!(out.max_step_error <= 1e-10);
        // One plain CD step on the whole model.
        let grad = partial_gradient(
            &spec,
            ds.block(0),
            &[0.0; 6],
            &[0.0; 4],
            ds.labels(),
            1.0,
        )
        .unwrap();
        let expected = cd_step(&[0.0; 4], &grad, 0.01);
        assert_eq!(est.params.block(0), expected.as_slice());
    }

    #[test]
    fn zero_step_leaves_model_untouched_but_emits_events() {
        let (ds, g, spec) = ridge_setup(10, 6, 3, 1);
        let mut est = ModelEstimate {
            index: 0,
            params: ModelParams::zeros(ds.block_dims()),
            token: Token::init_zero(10).unwrap(),
            current_client: 1,
        };
        let batch = BatchIndices::full(10);
        let settings = RoamSettings {
            spec: &spec,
            dataset: &ds,
            batch: &batch,
            eta: 0.0,
            hops: 4,
            local_updates: 3,
            loss_scale: 1.0,
            round: 0,
            dispatch: None,
            record_events: true,
            audit: AuditMode::EveryStep,
            record_objective: false,
        };
        let mut rng = token_stream(&RunConfig::new(1.0, 4, 3, 1, 1), 0, 0);
        let out = token_roaming(&mut est, &RoamDomain::Global(&g), &settings, &mut rng).unwrap();
        assert!(est.params.block(0).iter().all(|&v| v == 0.0));
        assert!(est.token.z().iter().all(|&v| v == 0.0));
        let hops = out
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Hop { .. }))
            .count();
        let steps = out
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::LocalStep { .. }))
            .count();
        assert_eq!(hops, 4);
        assert_eq!(steps, 12);
    }

    #[test]
    fn stcd_monotone_descent_with_small_step() {
        let (ds, _, _) = ridge_setup(50, 20, 4, 3);
        let g = build_topology(Topology::Path, 4).unwrap();
        let spec = GlmSpec::SquaredL2 { alpha: 1.0 };
        let l = smoothness_constant(&spec, &ds).unwrap().l;
        let mut cfg = RunConfig::new(1.0 / l, 5, 3, 1, 8);
        cfg.master_seed = 42;
        full_audit(&mut cfg);
        cfg.audit_objective = true;
        let res = run_stcd(&cfg, &g, &ds, &spec, &CostModel::default()).unwrap();
        let mut prev = res.f_initial;
        for (i, &f) in res.step_objectives.iter().enumerate() {
            assert!(
                f <= prev + 1e-12,
                "objective rose at step {i}: {prev} -> {f}"
            );
            prev = f;
        }
        assert!(res.audit.max_step_error <= 1e-8);
        // No server contact: cost is hops only.
        assert_eq!(res.hop_iterations, 40);
        assert!((res.comm_cost - 0.4).abs() < 1e-12);
    }

    #[test]
    fn stcd_is_sync_disabled_mtcd() {
        let (ds, g, spec) = ridge_setup(30, 12, 4, 5);
        let mut cfg = RunConfig::new(1e-3, 6, 2, 1, 5);
        cfg.master_seed = 9;
        cfg.trace = TraceMode::Full;
        let a = run_stcd(&cfg, &g, &ds, &spec, &CostModel::default()).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.sync_disabled = true;
        let b = run_mtcd(&cfg2, &g, None, &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn runs_are_deterministic_and_exec_mode_invariant() {
        let (ds, g, spec) = ridge_setup(24, 12, 4, 7);
        let part = ClusterPartition::new(&g, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let mut cfg = RunConfig::new(5e-4, 3, 2, 2, 6);
        cfg.sync_mode = SyncMode::TokenPerCluster;
        cfg.start_distribution = StartDistribution::UniformPerCluster;
        cfg.master_seed = 11;
        full_audit(&mut cfg);
        let a = run_mtcd(&cfg, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
        let b = run_mtcd(&cfg, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(a, b);
        let mut seq = cfg.clone();
        seq.exec = ExecMode::Sequential;
        let c = run_mtcd(&seq, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn event_counts_per_round() {
        let (ds, g, spec) = ridge_setup(20, 8, 4, 2);
        let mut cfg = RunConfig::new(1e-3, 3, 2, 2, 4);
        cfg.sync_mode = SyncMode::Overlapping;
        cfg.sync_token = SyncToken::Average;
        cfg.master_seed = 1;
        full_audit(&mut cfg);
        let res = run_mtcd(&cfg, &g, None, &ds, &spec, &CostModel::default()).unwrap();
        for t in 0..4 {
            let round: Vec<_> = res.trace.events.iter().filter(|e| e.round == t).collect();
            let hops = round
                .iter()
                .filter(|e| matches!(e.kind, EventKind::Hop { .. }))
                .count();
            let steps = round
                .iter()
                .filter(|e| matches!(e.kind, EventKind::LocalStep { .. }))
                .count();
            assert_eq!(hops, 2 * 3, "round {t}");
            assert_eq!(steps, 2 * 3 * 2, "round {t}");
            assert_eq!(
                round
                    .iter()
                    .filter(|e| matches!(
                        e.kind,
                        EventKind::SyncUpload { .. } | EventKind::SyncDownload { .. }
                    ))
                    .count(),
                2
            );
        }
        // Average variant: Gamma uploads + Gamma downloads at 1.0 each,
        // plus 6 hops per round at 0.01.
        let expected = 4.0 * (4.0 + 0.06);
        assert!((res.comm_cost - expected).abs() < 1e-9);
        assert!(res.audit.max_sync_error <= 1e-8);
        assert!(res.audit.max_step_error <= 1e-8);
    }

    #[test]
    fn token_per_cluster_block_locality() {
        let (ds, g, spec) = ridge_setup(24, 12, 6, 8);
        let part = ClusterPartition::new(&g, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let mut cfg = RunConfig::new(1e-3, 4, 2, 2, 1);
        cfg.sync_mode = SyncMode::TokenPerCluster;
        cfg.start_distribution = StartDistribution::UniformPerCluster;
        cfg.trace = TraceMode::Full;
        let res = run_mtcd(&cfg, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
        // Every local step of token g happened inside cluster g.
        for e in &res.trace.events {
            if let EventKind::LocalStep { token, client, .. } = e.kind {
                assert_eq!(part.cluster_of(client), token);
            }
            if let EventKind::Hop { token, from, to } = e.kind {
                assert_eq!(part.cluster_of(from), token);
                assert_eq!(part.cluster_of(to), token);
            }
        }
    }

    #[test]
    fn overlapping_coupled_tokens_reduce_to_single_token() {
        let (ds, g, spec) = ridge_setup(18, 9, 3, 4);
        let mut base = RunConfig::new(1e-3, 4, 2, 1, 5);
        base.sync_mode = SyncMode::Overlapping;
        base.sync_token = SyncToken::Average;
        base.start_distribution = StartDistribution::FixedClient(vec![1]);
        base.master_seed = 3;
        let single = run_mtcd(&base, &g, None, &ds, &spec, &CostModel::default()).unwrap();

        let mut coupled = base.clone();
        coupled.num_tokens = 2;
        coupled.start_distribution = StartDistribution::FixedClient(vec![1, 1]);
        coupled.shared_token_streams = true;
        let twin = run_mtcd(&coupled, &g, None, &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(single.final_params, twin.final_params);
        assert_eq!(
            single.eval_points.last().unwrap().f_value,
            twin.eval_points.last().unwrap().f_value
        );
    }

    #[test]
    fn client_server_recovery_matches_baseline_bitwise() {
        let ds = partition_even(&generate_synthetic_ridge(40, 16, 6).unwrap(), 8).unwrap();
        let spec = GlmSpec::SquaredL2 { alpha: 2.0 };
        let g = CommGraph::edgeless(8).unwrap();
        let part = ClusterPartition::singletons(&g).unwrap();
        let mut cfg = RunConfig::new(2e-4, 1, 4, 8, 6);
        cfg.sync_mode = SyncMode::TokenPerCluster;
        cfg.start_distribution = StartDistribution::UniformPerCluster;
        cfg.master_seed = 21;
        let mtcd = run_mtcd(&cfg, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
        let svfl = run_svfl_baseline(&cfg, &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(mtcd.final_params, svfl.final_params);
        let fa: Vec<f64> = mtcd.eval_points.iter().map(|p| p.f_value).collect();
        let fb: Vec<f64> = svfl.eval_points.iter().map(|p| p.f_value).collect();
        assert_eq!(fa, fb);
    }

    #[test]
    fn svfl_q1_matches_monolithic_gradient_descent() {
        let ds = partition_even(&generate_synthetic_ridge(30, 10, 3).unwrap(), 5).unwrap();
        let spec = GlmSpec::SquaredL2 { alpha: 1.5 };
        let eta = 1e-4;
        let mut cfg = RunConfig::new(eta, 1, 1, 1, 7);
        cfg.master_seed = 2;
        let res = run_svfl_baseline(&cfg, &ds, &spec, &CostModel::default()).unwrap();
        // Monolithic oracle: theta <- theta - eta * grad f(theta).
        let mut flat = vec![0.0; 10];
        for _ in 0..7 {
            let theta = ModelParams::from_flat(ds.block_dims(), &flat).unwrap();
            let grad = crate::objective::full_gradient(&spec, &ds, &theta).unwrap();
            for (x, gi) in flat.iter_mut().zip(&grad) {
                *x -= eta * gi;
            }
        }
        let got = res.final_params.flatten();
        for (a, b) in got.iter().zip(&flat) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        // Cost: K uploads + K downloads per round, no hops.
        assert_eq!(res.hop_iterations, 0);
        assert!((res.comm_cost - 7.0 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn sync_combine_weight_validation() {
        let (ds, _, _) = ridge_setup(10, 4, 2, 0);
        let est = |v: f64| ModelEstimate {
            index: 0,
            params: ModelParams::from_flat(ds.block_dims(), &[v; 4]).unwrap(),
            token: Token::init_zero(10).unwrap(),
            current_client: 0,
        };
        let ests = vec![est(1.0), est(3.0)];
        let uniform = vec![vec![0.5, 0.5]; 2];
        let combined = sync_combine(&ests, &uniform).unwrap();
        assert!(combined.flatten().iter().all(|&v| v == 2.0));

        let onehot = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let combined = sync_combine(&ests, &onehot).unwrap();
        assert_eq!(combined.block(0), &[1.0, 1.0]);
        assert_eq!(combined.block(1), &[3.0, 3.0]);

        assert_eq!(sync_combine(&ests[..1], &vec![vec![1.0]; 2]).unwrap(), ests[0].params);

        let bad = vec![vec![0.7, 0.7], vec![0.5, 0.5]];
        assert!(matches!(
            sync_combine(&ests, &bad),
            Err(Error::WeightsOffSimplex(_))
        ));
    }

    #[test]
    fn config_validation_errors() {
        let (ds, g, spec) = ridge_setup(10, 4, 2, 0);
        let cost = CostModel::default();
        let bad_eta = RunConfig::new(0.0, 1, 1, 1, 1);
        assert!(run_mtcd(&bad_eta, &g, None, &ds, &spec, &cost).is_err());

        let mut avg_mini = RunConfig::new(1e-3, 1, 1, 1, 1);
        avg_mini.sync_token = SyncToken::Average;
        avg_mini.batch = BatchSpec::Mini(4);
        assert!(run_mtcd(&avg_mini, &g, None, &ds, &spec, &cost).is_err());

        let mut tpc_avg = RunConfig::new(1e-3, 1, 1, 2, 1);
        tpc_avg.sync_mode = SyncMode::TokenPerCluster;
        tpc_avg.sync_token = SyncToken::Average;
        tpc_avg.start_distribution = StartDistribution::UniformPerCluster;
        let part = ClusterPartition::new(&g, vec![vec![0], vec![1]]).unwrap();
        assert!(run_mtcd(&tpc_avg, &g, Some(&part), &ds, &spec, &cost).is_err());

        let mut no_part = RunConfig::new(1e-3, 1, 1, 2, 1);
        no_part.sync_mode = SyncMode::TokenPerCluster;
        assert!(run_mtcd(&no_part, &g, None, &ds, &spec, &cost).is_err());

        let disconnected = CommGraph::edgeless(2).unwrap();
        let overlap = RunConfig::new(1e-3, 1, 1, 1, 1);
        assert!(matches!(
            run_mtcd(&overlap, &disconnected, None, &ds, &spec, &cost),
            Err(Error::Disconnected)
        ));

        // Disconnected cluster subgraph: {0} and {1} are fine on an edgeless
        // graph, but a two-node cluster with no internal edge is not.
        let g3 = CommGraph::from_edges(3, &[(0, 1)]).unwrap();
        let ds3 = partition_even(&generate_synthetic_ridge(10, 6, 0).unwrap(), 3).unwrap();
        let bad_part = ClusterPartition::new(&g3, vec![vec![0], vec![1, 2]]).unwrap();
        let mut tpc = RunConfig::new(1e-3, 1, 1, 2, 1);
        tpc.sync_mode = SyncMode::TokenPerCluster;
        tpc.start_distribution = StartDistribution::UniformPerCluster;
        assert!(matches!(
            run_mtcd(&tpc, &g3, Some(&bad_part), &ds3, &spec, &cost),
            Err(Error::ClusterDisconnected(1))
        ));

        // A partition built for a different graph size is rejected.
        let mut tpc2 = RunConfig::new(1e-3, 1, 1, 2, 1);
        tpc2.sync_mode = SyncMode::TokenPerCluster;
        tpc2.start_distribution = StartDistribution::UniformPerCluster;
        assert!(matches!(
            run_mtcd(&tpc2, &g, Some(&bad_part), &ds, &spec, &cost),
            Err(Error::PartitionInvalid(_))
        ));
    }

    #[test]
    fn single_cluster_reduction_runs_like_stcd_with_server_contact() {
        // One token, one cluster spanning every client: roaming matches the
        // single-token walk, interleaved with a per-round server sync.
        let (ds, g, spec) = ridge_setup(30, 12, 4, 6);
        let part = ClusterPartition::new(&g, vec![vec![0, 1, 2, 3]]).unwrap();
        let mut cfg = RunConfig::new(1e-3, 5, 2, 1, 3);
        cfg.sync_mode = SyncMode::TokenPerCluster;
        cfg.start_distribution = StartDistribution::UniformPerCluster;
        cfg.trace = TraceMode::Full;
        cfg.audit = AuditMode::EveryStep;
        let res = run_mtcd(&cfg, &g, Some(&part), &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(res.hop_iterations, 15);
        let uploads: usize = res
            .trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::SyncUpload { .. }))
            .count();
        assert_eq!(uploads, 3);
        assert!(res.audit.max_step_error <= 1e-8);
        // With a single estimate, the one-hot combine is the identity.
        assert_eq!(res.eval_points.len(), 3);
    }

    #[test]
    fn mini_batch_roundtrip_consistency() {
        let (ds, g, spec) = ridge_setup(30, 12, 4, 12);
        let mut cfg = RunConfig::new(1e-4, 3, 2, 2, 5);
        cfg.sync_mode = SyncMode::Overlapping;
        cfg.batch = BatchSpec::Mini(8);
        cfg.master_seed = 6;
        full_audit(&mut cfg);
        let res = run_mtcd(&cfg, &g, None, &ds, &spec, &CostModel::default()).unwrap();
        assert!(res.audit.max_step_error <= 1e-8, "{:?}", res.audit);
        assert!(res.audit.max_sync_error <= 1e-8);
        let res2 = run_mtcd(&cfg, &g, None, &ds, &spec, &CostModel::default()).unwrap();
        assert_eq!(res, res2);
    }

    #[test]
    fn early_stop_truncates_run() {
        let (ds, g, spec) = ridge_setup(20, 8, 2, 1);
        let sol = crate::objective::solve_reference(&spec, &ds, 1e-10).unwrap();
        let l = smoothness_constant(&spec, &ds).unwrap().l;
        let mut cfg = RunConfig::new(1.0 / l, 10, 5, 1, 4000);
        cfg.master_seed = 5;
        cfg.eval_every = 10;
        cfg.early_stop = Some(EarlyStop {
            f_star: sol.f_star,
            gap_threshold: 1e-3,
        });
        let res = run_stcd(&cfg, &g, &ds, &spec, &CostModel::default()).unwrap();
        assert!(res.stopped_early);
        let last = res.eval_points.last().unwrap();
        assert!((last.f_value - sol.f_star) / sol.f_star <= 1e-3);
        assert!((res.eval_points.len() as u64) < 400);
    }
}
