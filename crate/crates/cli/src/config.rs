//! Experiment configuration: TOML with sections, every unknown key rejected,
//! and a fully-explicit resolved echo that reproduces the run byte for byte.

use serde::{Deserialize, Serialize};

use mtcd_core::engine::{
    BatchSpec, ExecMode, RunConfig, StartDistribution, SyncMode, SyncToken, TraceMode,
};
use mtcd_core::graph::Topology;
use mtcd_core::objective::GlmSpec;

/// Configuration error with the offending key path where possible.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(path: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{path}: {msg}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub graph: GraphSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct DatasetSection {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_features: Option<usize>,
    /// Per-feature min-max scaling to [-1, 1].
    #[serde(default)]
    pub scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Svmlight,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ridge,
    LogisticL1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub topology: TopologyKind,
    pub clients: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    /// Disjoint client clusters for the token-per-cluster mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Path,
    Cycle,
    Grid,
    ErdosRenyi,
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub kind: AlgorithmKind,
    pub eta: f64,
    pub rounds: usize,
    #[serde(default = "default_one")]
    pub local_updates: usize,
    #[serde(default = "default_one")]
    pub hops_per_sync: usize,
    #[serde(default = "default_one")]
    pub num_tokens: usize,
    /// 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub sync_mode: SyncModeKind,
    #[serde(default)]
    pub sync_token: SyncTokenKind,
    /// Fixed per-token start clients; omit for uniform starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_clients: Option<Vec<usize>>,
    #[serde(default = "default_one")]
    pub eval_every: usize,
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Stcd,
    Mtcd,
    Svfl,
}

impl AlgorithmKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::Stcd => "stcd",
            AlgorithmKind::Mtcd => "mtcd",
            AlgorithmKind::Svfl => "svfl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SyncModeKind {
    #[default]
    Overlapping,
    TokenPerCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SyncTokenKind {
    /// Average for overlapping full-batch runs, recompute otherwise.
    #[default]
    Auto,
    Recompute,
    Average,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// C2S/C2C price ratio; C2S stays at 1 unit.
    pub ratio: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection { ratio: 100.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub tol: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection { tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: String,
    /// 0 uses the default thread pool.
    #[serde(default)]
    pub threads: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output() -> String {
    "results.csv".into()
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: default_seeds(),
            output: default_output(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_gap_threshold")]
    pub gap_threshold: f64,
    #[serde(default = "default_ratio_grid")]
    pub cost_ratio_grid: Vec<f64>,
    pub arms: Vec<SweepArm>,
}

fn default_gap_threshold() -> f64 {
    1e-4
}

fn default_ratio_grid() -> Vec<f64> {
    vec![100.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArm {
    pub algorithm: AlgorithmKind,
    pub eta_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_grid: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully-explicit echo: re-running from this text reproduces the output.
    pub fn to_resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                if self.dataset.n.is_none() || self.dataset.d.is_none() {
                    return Err(bad("dataset", "synthetic data needs n and d"));
                }
                if self.dataset.path.is_some() {
                    return Err(bad("dataset.path", "not used for synthetic data"));
                }
            }
            DatasetKind::Svmlight => {
                if self.dataset.path.is_none() {
                    return Err(bad("dataset.path", "svmlight data needs a file path"));
                }
                if self.dataset.n.is_some() || self.dataset.d.is_some() {
                    return Err(bad("dataset", "n/d are inferred from svmlight files"));
                }
            }
        }
        match self.model.kind {
            ModelKind::Ridge => {
                if self.model.beta.is_some() {
                    return Err(bad("model.beta", "ridge uses alpha"));
                }
            }
            ModelKind::LogisticL1 => {
                if self.model.alpha.is_some() {
                    return Err(bad("model.alpha", "logistic_l1 uses beta"));
                }
            }
        }
        let g = &self.graph;
        if g.clients == 0 {
            return Err(bad("graph.clients", "need at least one client"));
        }
        match g.topology {
            TopologyKind::Grid => {
                let (r, c) = (g.rows.unwrap_or(0), g.cols.unwrap_or(0));
                if r * c != g.clients {
                    return Err(bad("graph", "grid needs rows * cols = clients"));
                }
            }
            TopologyKind::ErdosRenyi => {
                let p = g.p.unwrap_or(0.0);
                if !p.is_finite() || p <= 0.0 || p > 1.0 {
                    return Err(bad("graph.p", "edge probability must be in (0, 1]"));
                }
            }
            _ => {
                if g.rows.is_some() || g.cols.is_some() {
                    return Err(bad("graph", "rows/cols are grid-only"));
                }
            }
        }
        let a = &self.algorithm;
        if !a.eta.is_finite() || a.eta <= 0.0 {
            return Err(bad("algorithm.eta", "step size must be positive"));
        }
        if a.rounds == 0 || a.local_updates == 0 || a.hops_per_sync == 0 || a.eval_every == 0 {
            return Err(bad(
                "algorithm",
                "rounds, local_updates, hops_per_sync, eval_every must be >= 1",
            ));
        }
        match a.kind {
            AlgorithmKind::Stcd => {
                if a.num_tokens != 1 {
                    return Err(bad("algorithm.num_tokens", "stcd roams a single token"));
                }
                if a.batch_size != 0 {
                    return Err(bad("algorithm.batch_size", "stcd runs full batch"));
                }
            }
            AlgorithmKind::Mtcd => {
                if a.sync_mode == SyncModeKind::TokenPerCluster && g.clusters.is_none() {
                    return Err(bad("graph.clusters", "token_per_cluster needs clusters"));
                }
            }
            AlgorithmKind::Svfl => {}
        }
        if !self.cost.ratio.is_finite() || self.cost.ratio <= 0.0 {
            return Err(bad("cost.ratio", "must be positive"));
        }
        if !self.reference.tol.is_finite() || self.reference.tol <= 0.0 {
            return Err(bad("reference.tol", "must be positive"));
        }
        if self.run.seeds.is_empty() {
            return Err(bad("run.seeds", "need at least one seed"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.arms.is_empty() {
                return Err(bad("sweep.arms", "need at least one arm"));
            }
            if !sweep.gap_threshold.is_finite() || sweep.gap_threshold <= 0.0 {
                return Err(bad("sweep.gap_threshold", "must be positive"));
            }
            if sweep.cost_ratio_grid.is_empty() {
                return Err(bad("sweep.cost_ratio_grid", "need at least one ratio"));
            }
            for (i, arm) in sweep.arms.iter().enumerate() {
                if arm.eta_grid.is_empty() {
                    return Err(bad(&format!("sweep.arms[{i}].eta_grid"), "empty grid"));
                }
                if arm.algorithm == AlgorithmKind::Svfl
                    && (arm.hops_grid.is_some() || arm.tokens_grid.is_some())
                {
                    return Err(bad(
                        &format!("sweep.arms[{i}]"),
                        "svfl has no hops/tokens grid",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn glm_spec(&self) -> GlmSpec {
        match self.model.kind {
            ModelKind::Ridge => GlmSpec::SquaredL2 {
                alpha: self.model.alpha.unwrap_or(0.0),
            },
            ModelKind::LogisticL1 => GlmSpec::LogisticL1 {
                beta: self.model.beta.unwrap_or(0.0),
            },
        }
    }

    pub fn topology(&self) -> Topology {
        match self.graph.topology {
            TopologyKind::Complete => Topology::Complete,
            TopologyKind::Path => Topology::Path,
            TopologyKind::Cycle => Topology::Cycle,
            TopologyKind::Grid => Topology::Grid {
                rows: self.graph.rows.unwrap_or(0),
                cols: self.graph.cols.unwrap_or(0),
            },
            TopologyKind::ErdosRenyi => Topology::ErdosRenyi {
                p: self.graph.p.unwrap_or(0.0),
                seed: self.graph.seed,
            },
            TopologyKind::Empty => Topology::Empty,
        }
    }

    /// Token rebuild variant after `auto` resolution.
    pub fn resolved_sync_token(&self) -> SyncToken {
        match self.algorithm.sync_token {
            SyncTokenKind::Recompute => SyncToken::Recompute,
            SyncTokenKind::Average => SyncToken::Average,
            SyncTokenKind::Auto => {
                let overlapping = self.algorithm.sync_mode == SyncModeKind::Overlapping;
                let full_batch = self.algorithm.batch_size == 0;
                if overlapping && full_batch && self.algorithm.kind == AlgorithmKind::Mtcd {
                    SyncToken::Average
                } else {
                    SyncToken::Recompute
                }
            }
        }
    }

    pub fn start_distribution(&self) -> StartDistribution {
        if let Some(list) = &self.algorithm.start_clients {
            return StartDistribution::FixedClient(list.clone());
        }
        match (self.algorithm.kind, self.algorithm.sync_mode) {
            (AlgorithmKind::Mtcd, SyncModeKind::TokenPerCluster) => {
                StartDistribution::UniformPerCluster
            }
            _ => StartDistribution::UniformAllClients,
        }
    }

    /// Engine configuration for one seed.
    pub fn run_config(&self, master_seed: u64) -> RunConfig {
        let a = &self.algorithm;
        RunConfig {
            eta: a.eta,
            hops_per_sync: a.hops_per_sync,
            local_updates: a.local_updates,
            num_tokens: a.num_tokens,
            rounds: a.rounds,
            batch: if a.batch_size == 0 {
                BatchSpec::Full
            } else {
                BatchSpec::Mini(a.batch_size)
            },
            sync_mode: match a.sync_mode {
                SyncModeKind::Overlapping => SyncMode::Overlapping,
                SyncModeKind::TokenPerCluster => SyncMode::TokenPerCluster,
            },
            sync_token: self.resolved_sync_token(),
            sync_disabled: a.kind == AlgorithmKind::Stcd,
            start_distribution: self.start_distribution(),
            master_seed,
            eval_every: a.eval_every,
            shared_token_streams: false,
            exec: ExecMode::Parallel,
            trace: TraceMode::EvalOnly,
            audit: mtcd_core::engine::AuditMode::Syncs,
            audit_objective: false,
            early_stop: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "synthetic"
n = 20
d = 10

[model]
kind = "ridge"
alpha = 1.0

[graph]
topology = "path"
clients = 5

[algorithm]
kind = "stcd"
eta = 1e-4
rounds = 3
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.run.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.cost.ratio, 100.0);
        assert_eq!(cfg.algorithm.local_updates, 1);
        let rc = cfg.run_config(7);
        assert!(rc.sync_disabled);
        assert_eq!(rc.master_seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let text = MINIMAL.replace("alpha = 1.0", "alpha = 1.0\nalfa = 2.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.0.contains("alfa"), "{}", err.0);
    }

    #[test]
    fn resolved_echo_reparses_identically() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let echo = cfg.to_resolved_toml();
        let again = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(echo, again.to_resolved_toml());
    }

    #[test]
    fn auto_sync_token_resolution() {
        let mut text = MINIMAL.replace("kind = \"stcd\"", "kind = \"mtcd\"");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.resolved_sync_token(), SyncToken::Average);
        text.push_str("batch_size = 8\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.resolved_sync_token(), SyncToken::Recompute);
    }

    #[test]
    fn validation_rejects_contradictions() {
        let bad_eta = MINIMAL.replace("eta = 1e-4", "eta = 0.0");
        assert!(ExperimentConfig::from_toml(&bad_eta).is_err());

        let ridge_beta = MINIMAL.replace("alpha = 1.0", "beta = 1.0");
        assert!(ExperimentConfig::from_toml(&ridge_beta).is_err());

        let tpc = MINIMAL
            .replace("kind = \"stcd\"", "kind = \"mtcd\"\nsync_mode = \"token_per_cluster\"");
        assert!(ExperimentConfig::from_toml(&tpc)
            .unwrap_err()
            .0
            .contains("clusters"));
    }
}
