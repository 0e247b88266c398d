//! Suboptimality gaps, communication-cost accounting, step-size-bound
//! constants with their validity flags, the surrogate-offset probe, an
//! empirical gradient-variance estimator, and CSV export.

use std::io::Write;

use rand_chacha::ChaCha8Rng;

use crate::data::{sample_batch, FeatureDataset};
use crate::engine::{EvalPoint, EventKind, EventTrace, StartDistribution};
use crate::graph::{rho_bound, ClusterPartition, CommGraph, RhoBranch};
use crate::linalg::norm2;
use crate::objective::{full_gradient, GlmSpec, ModelParams};
use crate::{Error, Result};

/// Message pricing: client-to-server and client-to-client messages both move
/// one communication unit (a token-sized payload of `unit_scalars` numbers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub c2s_cost: f64,
    pub c2c_cost: f64,
    /// Scalars per communication unit; informational (the token length).
    pub unit_scalars: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        // C2S/C2C = 100.
        CostModel {
            c2s_cost: 1.0,
            c2c_cost: 0.01,
            unit_scalars: 0,
        }
    }
}

impl CostModel {
    pub fn with_ratio(ratio: f64) -> Self {
        CostModel {
            c2s_cost: 1.0,
            c2c_cost: 1.0 / ratio,
            unit_scalars: 0,
        }
    }
}

/// Suboptimality gap; relative when the reference optimum is positive,
/// otherwise the absolute gap with the flag cleared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub value: f64,
    pub is_relative: bool,
}

pub fn suboptimality(f_val: f64, f_star: f64) -> Gap {
    if f_star > 0.0 {
        Gap {
            value: (f_val - f_star) / f_star,
            is_relative: true,
        }
    } else {
        Gap {
            value: f_val - f_star,
            is_relative: false,
        }
    }
}

/// Cumulative counters at one eval event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPoint {
    pub round: usize,
    pub hop_iterations: u64,
    pub comm_cost: f64,
    pub f_value: f64,
    pub grad_norm: f64,
}

/// Fold a full event trace into per-eval cumulative hop-iteration and cost
/// counters: one iteration and one `c2c` charge per hop (local steps are
/// free), one `c2s` charge per sync message.
pub fn accumulate_cost(trace: &EventTrace, model: &CostModel) -> Vec<CostPoint> {
    let mut points = Vec::new();
    let mut hops: u64 = 0;
    let mut cost = 0.0;
    for event in &trace.events {
        match &event.kind {
            EventKind::Hop { .. } => {
                hops += 1;
                cost += model.c2c_cost;
            }
            EventKind::LocalStep { .. } => {}
            EventKind::SyncUpload { messages, .. } | EventKind::SyncDownload { messages, .. } => {
                cost += model.c2s_cost * *messages as f64;
            }
            EventKind::Eval { f_value, grad_norm } => points.push(CostPoint {
                round: event.round,
                hop_iterations: hops,
                comm_cost: cost,
                f_value: *f_value,
                grad_norm: *grad_norm,
            }),
        }
    }
    points
}

/// Which convergence statement the constants instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremVariant {
    TokenPerCluster,
    Overlapping,
}

/// Walk domain the visiting-probability bound is computed over.
#[derive(Debug, Clone, Copy)]
pub enum WalkDomain<'a> {
    Global(&'a CommGraph),
    Clusters(&'a ClusterPartition),
}

/// Step-size-bound constants and their validity flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremConstants {
    pub variant: TheoremVariant,
    pub l: f64,
    pub eta: f64,
    pub hops: usize,
    pub local_updates: usize,
    /// Visiting-probability lower bound (min over clusters in the
    /// token-per-cluster setting).
    pub rho: f64,
    pub rho_branch: RhoBranch,
    /// Smallest start probability over clients.
    pub p: f64,
    /// Surrogate-offset constant `eta * e * L * S * Q`.
    pub c1: f64,
    /// Per-round descent constant
    /// `p * eta * Q * (rho (1 - eta L S Q) - S C1 (1 + eta L S Q C1))`.
    pub c0: f64,
    /// Admissible step-size bound `rho / ((L+1) S Q (rho + S e (1+e)))`.
    pub eta_max: f64,
    pub eta_within_bound: bool,
    pub c0_positive: bool,
    /// Initial optimality gap `f(theta_0) - f_star`, filled in by the caller
    /// once the reference solve is available.
    pub delta: Option<f64>,
}

/// Assemble the step-size-bound constants for a run shape.
pub fn theorem_constants(
    l: f64,
    eta: f64,
    hops: usize,
    local_updates: usize,
    domain: WalkDomain,
    start: &StartDistribution,
) -> Result<TheoremConstants> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(l) || !positive(eta) || hops == 0 || local_updates == 0 {
        return Err(Error::InvalidInput(
            "theorem constants need positive L, eta, S, Q".into(),
        ));
    }
    let (variant, rho, rho_branch) = match domain {
        WalkDomain::Global(g) => {
            let rb = rho_bound(g, hops)?;
            (TheoremVariant::Overlapping, rb.value, rb.branch)
        }
        WalkDomain::Clusters(part) => {
            let mut worst: Option<crate::graph::RhoBound> = None;
            for c in 0..part.num_clusters() {
                let rb = rho_bound(part.subgraph(c), hops)?;
                if worst.is_none_or(|w| rb.value < w.value) {
                    worst = Some(rb);
                }
            }
            let rb = worst.expect("partition has at least one cluster");
            (TheoremVariant::TokenPerCluster, rb.value, rb.branch)
        }
    };
    let p = start_probability_floor(domain, start)?;
    let s = hops as f64;
    let q = local_updates as f64;
    let e = std::f64::consts::E;
    let c1 = eta * e * l * s * q;
    let elsq = eta * l * s * q;
    let c0 = p * eta * q * (rho * (1.0 - elsq) - s * c1 * (1.0 + elsq * c1));
    let eta_max = rho / ((l + 1.0) * s * q * (rho + s * e * (1.0 + e)));
    Ok(TheoremConstants {
        variant,
        l,
        eta,
        hops,
        local_updates,
        rho,
        rho_branch,
        p,
        c1,
        c0,
        eta_max,
        eta_within_bound: eta < eta_max,
        c0_positive: c0 > 0.0,
        delta: None,
    })
}

/// Smallest per-client probability of being a token's start client.
fn start_probability_floor(domain: WalkDomain, start: &StartDistribution) -> Result<f64> {
    match (domain, start) {
        (WalkDomain::Global(g), StartDistribution::UniformAllClients) => {
            Ok(1.0 / g.num_clients() as f64)
        }
        (WalkDomain::Clusters(part), StartDistribution::UniformPerCluster) => {
            Ok(1.0 / part.max_cluster_size() as f64)
        }
        (WalkDomain::Global(g), StartDistribution::FixedClient(_)) => {
            Ok(if g.num_clients() == 1 { 1.0 } else { 0.0 })
        }
        (WalkDomain::Clusters(part), StartDistribution::FixedClient(_)) => {
            Ok(if part.max_cluster_size() == 1 { 1.0 } else { 0.0 })
        }
        _ => Err(Error::InvalidConfig(
            "start distribution does not match the walk domain".into(),
        )),
    }
}

/// Result of replaying one exact-gradient roaming segment against the
/// surrogate-offset bound `||delta^{s,q}|| <= eta e L S Q ||grad(v0)||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateProbe {
    pub max_ratio: f64,
    pub pass: bool,
    /// First violating `(hop, local step)` when the bound failed.
    pub violation: Option<(usize, usize)>,
    pub c1: f64,
    pub grad0_norm: f64,
}

/// Replay a visit sequence with plain CD steps and exact full-batch
/// gradients, checking the surrogate-offset bound at every step. The replay
/// works straight from dense gradient evaluations, independent of the
/// token-update path.
pub fn lemma_probe_surrogate(
    spec: &GlmSpec,
    ds: &FeatureDataset,
    visits: &[usize],
    start: &ModelParams,
    l: f64,
    eta: f64,
    local_updates: usize,
) -> Result<SurrogateProbe> {
    let s = visits.len();
    if s == 0 || local_updates == 0 {
        return Err(Error::InvalidInput("empty roaming segment".into()));
    }
    let bound = 1.0 / (l * s as f64 * local_updates as f64);
    if !eta.is_finite() || eta < 0.0 || eta > bound {
        return Err(Error::InvalidInput(format!(
            "step size {eta} above the admissible 1/(LSQ) = {bound}"
        )));
    }
    let dims = ds.block_dims().to_vec();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0usize, |acc, &d| {
            let lo = *acc;
            *acc += d;
            Some(lo)
        })
        .collect();
    let block_slice = |flat: &[f64], k: usize| flat[offsets[k]..offsets[k] + dims[k]].to_vec();

    let grad0 = full_gradient(spec, ds, start)?;
    let grad0_norm = norm2(&grad0);
    let c1 = eta * std::f64::consts::E * l * s as f64 * local_updates as f64;
    let denominator = c1 * grad0_norm;

    let mut v = start.clone();
    let mut max_ratio: f64 = 0.0;
    let mut violation = None;
    for (hop, &k) in visits.iter().enumerate() {
        if k >= dims.len() {
            return Err(Error::InvalidNode {
                node: k,
                clients: dims.len(),
            });
        }
        for step in 0..local_updates {
            let grad = full_gradient(spec, ds, &v)?;
            let gk = block_slice(&grad, k);
            let gk0 = block_slice(&grad0, k);
            let delta_norm = norm2(&crate::linalg::sub(&gk, &gk0));
            let ratio = if denominator > 0.0 {
                delta_norm / denominator
            } else if delta_norm == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            if ratio > 1.0 && violation.is_none() {
                violation = Some((hop, step));
            }
            let updated = crate::objective::cd_step(v.block(k), &gk, eta);
            v.set_block(k, updated);
        }
    }
    Ok(SurrogateProbe {
        max_ratio,
        pass: violation.is_none(),
        violation,
        c1,
        grad0_norm,
    })
}

/// Monte Carlo estimate of the mean squared deviation of the mini-batch
/// gradient from the full gradient. Reported for the variance scale only,
/// never asserted as a bound.
pub fn empirical_variance(
    spec: &GlmSpec,
    ds: &FeatureDataset,
    theta: &ModelParams,
    batch_size: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let n = ds.num_samples();
    let full = full_gradient(spec, ds, theta)?;
    let scale = n as f64 / batch_size as f64;
    let mut total = 0.0;
    for _ in 0..trials {
        let batch = sample_batch(n, batch_size, rng)?;
        let mut sq = 0.0;
        if batch.is_full() {
            // Identical gradient; deviation is exactly zero.
            continue;
        }
        let idx = batch.indices();
        // Batch aggregate over all blocks, then residual and per-block grads.
        let labels: Vec<f64> = idx.iter().map(|&i| ds.labels()[i]).collect();
        let mut z = vec![0.0; idx.len()];
        for k in 0..ds.num_blocks() {
            let rows = ds.block(k).select_rows(idx)?;
            for (zi, vi) in z.iter_mut().zip(rows.matvec(theta.block(k))?) {
                *zi += vi;
            }
        }
        let resid = crate::objective::residual_grad(spec, &z, &labels)?;
        let mut lo = 0usize;
        for k in 0..ds.num_blocks() {
            let rows = ds.block(k).select_rows(idx)?;
            let mut gk = rows.matvec_t(&resid)?;
            for g in &mut gk {
                *g *= scale;
            }
            if let GlmSpec::SquaredL2 { alpha } = spec {
                crate::linalg::axpy(*alpha, theta.block(k), &mut gk);
            }
            for (j, g) in gk.iter().enumerate() {
                let diff = g - full[lo + j];
                sq += diff * diff;
            }
            lo += gk.len();
        }
        total += sq;
    }
    Ok(total / trials as f64)
}

/// One labeled run for CSV export.
#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub run_id: String,
    pub seed: u64,
    pub algorithm: String,
    pub f_star: f64,
    pub eval_points: Vec<EvalPoint>,
}

/// Write runs as CSV: one row per eval event, 17 significant digits so a
/// reload reproduces every value exactly.
pub fn export_csv<W: Write>(runs: &[LabeledRun], w: &mut W) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("no runs to export".into()));
    }
    writeln!(
        w,
        "run_id,seed,algorithm,round,hop_iterations,comm_cost,f_value,rel_subopt_gap,grad_norm"
    )?;
    for run in runs {
        for p in &run.eval_points {
            let gap = suboptimality(p.f_value, run.f_star);
            writeln!(
                w,
                "{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                run.run_id,
                run.seed,
                run.algorithm,
                p.round,
                p.hop_iterations,
                p.comm_cost,
                p.f_value,
                gap.value,
                p.grad_norm
            )?;
        }
    }
    Ok(())
}

/// Extract the clients visited by one token in one round from a full trace,
/// in hop order (the roaming segment's visit sequence).
pub fn visit_sequence(trace: &EventTrace, token: usize, round: usize) -> Vec<usize> {
    trace
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Hop { token: t, from, .. } if t == token && e.round == round => Some(from),
            _ => None,
        })
        .collect()
}
