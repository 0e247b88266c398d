use thiserror::Error;

/// Errors surfaced by graph construction, dataset handling, solvers, and the
/// protocol drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid dimensions {rows}x{cols} do not match {clients} clients")]
    GridDimensionMismatch {
        rows: usize,
        cols: usize,
        clients: usize,
    },

    #[error("edge probability {0} outside (0, 1]")]
    EdgeProbability(f64),

    #[error("no connected graph found after {0} resampling attempts")]
    ResampleLimit(usize),

    #[error("node id {node} out of range for {clients} clients")]
    InvalidNode { node: usize, clients: usize },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("graph has {clients} nodes, above the dense-eigensolve limit {limit}")]
    SizeLimit { clients: usize, limit: usize },

    #[error("mixing time exceeded the {0}-step cap")]
    MixingCap(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch size {batch} out of range for {samples} samples")]
    BatchSize { batch: usize, samples: usize },

    #[error("cannot partition {features} features over {clients} clients")]
    PartitionTooFine { features: usize, clients: usize },

    #[error("{path}:{line}: {reason}")]
    SvmlightParse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("power iteration did not converge within {0} iterations")]
    PowerIteration(usize),

    #[error("solver exceeded the {0}-iteration cap")]
    IterationCap(usize),

    #[error("combination weights off the simplex: {0}")]
    WeightsOffSimplex(String),

    #[error("tokens carry mismatched active sample sets")]
    MismatchedActiveSets,

    #[error("cluster partition invalid: {0}")]
    PartitionInvalid(String),

    #[error("cluster {0} induces a disconnected subgraph")]
    ClusterDisconnected(usize),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
