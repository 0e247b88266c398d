//! Communication topologies and the lazy-random-walk analytics that govern
//! token roaming: stationary distribution, spectral gap, mixing-time bounds,
//! and the S-hop visiting-probability lower bound.
//!
//! All walks are lazy: from client `k` the token moves to a member of the
//! closed neighborhood `N̄_k = N_k ∪ {k}` with probability `1/(d(k)+1)` each,
//! which makes the chain aperiodic on any connected graph.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rngstream::{child_stream, DOMAIN_GRAPH};
use crate::{Error, Result};

/// Dense eigensolves are refused above this node count.
pub const DENSE_EIGEN_LIMIT: usize = 4096;
/// Exact mixing times use dense matrix powers and are refused above this.
pub const MIXING_MATRIX_LIMIT: usize = 64;
/// Step cap for the exact mixing-time search.
pub const MIXING_STEP_CAP: usize = 1_000_000;
/// Resampling cap for random-graph construction.
pub const RESAMPLE_LIMIT: usize = 1000;

/// Undirected client communication graph with sorted neighbor lists.
///
/// Self-loops are never stored; laziness is a property of the walk, not of
/// the edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    num_clients: usize,
    neighbors: Vec<Vec<usize>>,
    edge_count: usize,
    resample_attempts: Option<usize>,
}

impl CommGraph {
    /// Build from an explicit edge list. Rejects self-loops, duplicate edges,
    /// and out-of-range ids.
    pub fn from_edges(num_clients: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut neighbors = vec![Vec::new(); num_clients];
        for &(i, j) in edges {
            if i >= num_clients || j >= num_clients {
                return Err(Error::InvalidNode {
                    node: i.max(j),
                    clients: num_clients,
                });
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop on node {i}")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput("duplicate edge".into()));
            }
        }
        Ok(CommGraph {
            num_clients,
            neighbors,
            edge_count: edges.len(),
            resample_attempts: None,
        })
    }

    /// Graph on `num_clients` nodes with no edges (client-server recovery).
    pub fn edgeless(num_clients: usize) -> Result<Self> {
        CommGraph::from_edges(num_clients, &[])
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, k: usize) -> Result<&[usize]> {
        self.check_node(k)?;
        Ok(&self.neighbors[k])
    }

    pub fn degree(&self, k: usize) -> Result<usize> {
        Ok(self.neighbors(k)?.len())
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Attempts consumed by random-graph resampling, when applicable.
    pub fn resample_attempts(&self) -> Option<usize> {
        self.resample_attempts
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_clients];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_clients
    }

    fn check_node(&self, k: usize) -> Result<()> {
        if k >= self.num_clients {
            return Err(Error::InvalidNode {
                node: k,
                clients: self.num_clients,
            });
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::Disconnected)
        }
    }

    fn check_eigen_size(&self) -> Result<()> {
        if self.num_clients > DENSE_EIGEN_LIMIT {
            return Err(Error::SizeLimit {
                clients: self.num_clients,
                limit: DENSE_EIGEN_LIMIT,
            });
        }
        Ok(())
    }

    /// Write the edge list as one `i j` pair per line with `i < j`.
    pub fn export_edge_list<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                if i < j {
                    writeln!(w, "{} {}", i, j)?;
                }
            }
        }
        Ok(())
    }
}

/// Named topology kinds accepted by [`build_topology`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Complete,
    Path,
    Cycle,
    Grid { rows: usize, cols: usize },
    ErdosRenyi { p: f64, seed: u64 },
    /// No edges at all; useful for the pure client-server setting.
    Empty,
}

/// Construct one of the named topologies on `k` clients.
///
/// Erdős–Rényi graphs are resampled with an incremented sub-seed until
/// connected; the attempt count is recorded on the returned graph.
pub fn build_topology(kind: Topology, k: usize) -> Result<CommGraph> {
    match kind {
        Topology::Complete => {
            let mut edges = Vec::new();
            for i in 0..k {
                for j in (i + 1)..k {
                    edges.push((i, j));
                }
            }
            CommGraph::from_edges(k, &edges)
        }
        Topology::Path => {
            let edges: Vec<_> = (1..k).map(|i| (i - 1, i)).collect();
            CommGraph::from_edges(k, &edges)
        }
        Topology::Cycle => {
            let mut edges: Vec<_> = (1..k).map(|i| (i - 1, i)).collect();
            if k >= 3 {
                edges.push((k - 1, 0));
            }
            CommGraph::from_edges(k, &edges)
        }
        Topology::Grid { rows, cols } => {
            if rows * cols != k || k == 0 {
                return Err(Error::GridDimensionMismatch {
                    rows,
                    cols,
                    clients: k,
                });
            }
            let id = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r, c + 1)));
                    }
                    if r + 1 < rows {
                        edges.push((id(r, c), id(r + 1, c)));
                    }
                }
            }
            CommGraph::from_edges(k, &edges)
        }
        Topology::ErdosRenyi { p, seed } => {
            if !p.is_finite() || p <= 0.0 || p > 1.0 {
                return Err(Error::EdgeProbability(p));
            }
            for attempt in 0..RESAMPLE_LIMIT {
                let mut rng = child_stream(seed, DOMAIN_GRAPH, attempt as u64, 0);
                let mut edges = Vec::new();
                for i in 0..k {
                    for j in (i + 1)..k {
                        if rng.gen::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                let mut g = CommGraph::from_edges(k, &edges)?;
                if g.is_connected() {
                    g.resample_attempts = Some(attempt + 1);
                    return Ok(g);
                }
            }
            Err(Error::ResampleLimit(RESAMPLE_LIMIT))
        }
        Topology::Empty => CommGraph::edgeless(k),
    }
}

/// Disjoint clusters covering all clients, with the induced subgraph of each
/// cluster stored for per-cluster walks.
#[derive(Debug, Clone)]
pub struct ClusterPartition {
    clusters: Vec<Vec<usize>>,
    subgraphs: Vec<CommGraph>,
    cluster_of: Vec<usize>,
    local_index: Vec<usize>,
}

impl ClusterPartition {
    pub fn new(graph: &CommGraph, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let k = graph.num_clients();
        if clusters.is_empty() {
            return Err(Error::PartitionInvalid("no clusters".into()));
        }
        let mut cluster_of = vec![usize::MAX; k];
        let mut local_index = vec![usize::MAX; k];
        let mut sorted: Vec<Vec<usize>> = Vec::with_capacity(clusters.len());
        for (c, members) in clusters.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::PartitionInvalid(format!("cluster {c} is empty")));
            }
            let mut m = members;
            m.sort_unstable();
            m.dedup();
            for (local, &node) in m.iter().enumerate() {
                if node >= k {
                    return Err(Error::PartitionInvalid(format!(
                        "cluster {c} references node {node} beyond {k} clients"
                    )));
                }
                if cluster_of[node] != usize::MAX {
                    return Err(Error::PartitionInvalid(format!(
                        "node {node} appears in more than one cluster"
                    )));
                }
                cluster_of[node] = c;
                local_index[node] = local;
            }
            sorted.push(m);
        }
        if cluster_of.contains(&usize::MAX) {
            return Err(Error::PartitionInvalid(
                "clusters do not cover all clients".into(),
            ));
        }
        let mut subgraphs = Vec::with_capacity(sorted.len());
        for members in &sorted {
            let mut edges = Vec::new();
            for (local, &node) in members.iter().enumerate() {
                for &nb in &graph.neighbors[node] {
                    if cluster_of[nb] == cluster_of[node] && node < nb {
                        edges.push((local, local_index[nb]));
                    }
                }
            }
            subgraphs.push(CommGraph::from_edges(members.len(), &edges)?);
        }
        Ok(ClusterPartition {
            clusters: sorted,
            subgraphs,
            cluster_of,
            local_index,
        })
    }

    /// One singleton cluster per client.
    pub fn singletons(graph: &CommGraph) -> Result<Self> {
        let clusters = (0..graph.num_clients()).map(|k| vec![k]).collect();
        ClusterPartition::new(graph, clusters)
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster(&self, c: usize) -> &[usize] {
        &self.clusters[c]
    }

    pub fn subgraph(&self, c: usize) -> &CommGraph {
        &self.subgraphs[c]
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.cluster_of[node]
    }

    pub fn local_index(&self, node: usize) -> usize {
        self.local_index[node]
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of clients the partition covers.
    pub fn num_clients(&self) -> usize {
        self.cluster_of.len()
    }
}

/// Choice of stationary-vector normalization.
///
/// `DegreePlusOne` divides by `sum_j (d(j)+1)` so the vector sums to one
/// under self-loop-free edge storage. `TwiceEdges` divides by `2|E|`, which
/// matches the usual closed form for non-lazy walks but does not sum to one
/// here; it is kept for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryNorm {
    DegreePlusOne,
    TwiceEdges,
}

/// Transition probabilities out of client `k` under the lazy walk:
/// `1/(d(k)+1)` to each member of the closed neighborhood, zero elsewhere.
pub fn lazy_transition_row(g: &CommGraph, k: usize) -> Result<Vec<f64>> {
    g.check_node(k)?;
    let mut row = vec![0.0; g.num_clients()];
    let p = 1.0 / (g.neighbors[k].len() as f64 + 1.0);
    row[k] = p;
    for &j in &g.neighbors[k] {
        row[j] = p;
    }
    Ok(row)
}

/// Full lazy-walk transition matrix as dense rows. Intended for analytics and
/// tests at small sizes.
pub fn transition_matrix(g: &CommGraph) -> Vec<Vec<f64>> {
    (0..g.num_clients())
        .map(|k| lazy_transition_row(g, k).expect("node in range"))
        .collect()
}

/// Draw the next client uniformly from the closed neighborhood of `k`.
/// A self-hop is always possible; an isolated node always returns itself.
pub fn sample_next(g: &CommGraph, k: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    g.check_node(k)?;
    let deg = g.neighbors[k].len();
    let idx = rng.gen_range(0..=deg);
    Ok(if idx == deg { k } else { g.neighbors[k][idx] })
}

/// Stationary distribution of the lazy walk, `pi_k = (d(k)+1) / sum_j (d(j)+1)`.
pub fn stationary_distribution(g: &CommGraph) -> Result<Vec<f64>> {
    stationary_distribution_with(g, StationaryNorm::DegreePlusOne)
}

pub fn stationary_distribution_with(g: &CommGraph, norm: StationaryNorm) -> Result<Vec<f64>> {
    g.check_connected()?;
    let weights: Vec<f64> = g.neighbors.iter().map(|n| n.len() as f64 + 1.0).collect();
    let z = match norm {
        StationaryNorm::DegreePlusOne => weights.iter().sum::<f64>(),
        StationaryNorm::TwiceEdges => {
            if g.edge_count == 0 {
                return Err(Error::InvalidInput(
                    "2|E| normalization undefined on an edgeless graph".into(),
                ));
            }
            2.0 * g.edge_count as f64
        }
    };
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Second-largest eigenvalue of the lazy-walk matrix in absolute value.
///
/// The walk is reversible, so `P` is similar to the symmetric matrix
/// `S_ij = P_ij * sqrt((d_i+1)/(d_j+1))`, which a dense symmetric eigensolver
/// handles. Single-node graphs return zero by convention.
pub fn second_eigenvalue(g: &CommGraph) -> Result<f64> {
    g.check_connected()?;
    g.check_eigen_size()?;
    let k = g.num_clients();
    if k == 1 {
        return Ok(0.0);
    }
    let w: Vec<f64> = g.neighbors.iter().map(|n| n.len() as f64 + 1.0).collect();
    let mut s = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        s[(i, i)] = 1.0 / w[i];
        for &j in &g.neighbors[i] {
            s[(i, j)] = 1.0 / (w[i] * w[j]).sqrt();
        }
    }
    let mut eigs: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).expect("finite eigenvalues"));
    debug_assert!((eigs[0] - 1.0).abs() < 1e-8, "leading eigenvalue not 1");
    Ok(eigs[1].abs())
}

/// Second-smallest eigenvalue of the Laplacian `L = D - A`.
pub fn algebraic_connectivity(g: &CommGraph) -> Result<f64> {
    g.check_eigen_size()?;
    let k = g.num_clients();
    if k < 2 {
        return Err(Error::InvalidInput(
            "algebraic connectivity needs at least two nodes".into(),
        ));
    }
    let mut l = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        l[(i, i)] = g.neighbors[i].len() as f64;
        for &j in &g.neighbors[i] {
            l[(i, j)] = -1.0;
        }
    }
    let mut eigs: Vec<f64> = l.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(eigs[1])
}

/// Mixing-time upper bound `3 ln(1/pi_min) / (2 (1 - lambda_2))`.
pub fn mixing_time_bound(g: &CommGraph) -> Result<f64> {
    mixing_time_bound_with(g, StationaryNorm::DegreePlusOne)
}

pub fn mixing_time_bound_with(g: &CommGraph, norm: StationaryNorm) -> Result<f64> {
    let pi = stationary_distribution_with(g, norm)?;
    let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda2 = second_eigenvalue(g)?;
    Ok(1.5 * (1.0 / pi_min).ln() / (1.0 - lambda2))
}

/// Smallest `t` such that every row of `P^t` is within total-variation
/// distance `eps` of the stationary distribution.
pub fn mixing_time_exact(g: &CommGraph, eps: f64) -> Result<usize> {
    if eps <= 0.0 {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    if g.num_clients() > MIXING_MATRIX_LIMIT {
        return Err(Error::SizeLimit {
            clients: g.num_clients(),
            limit: MIXING_MATRIX_LIMIT,
        });
    }
    let pi = stationary_distribution(g)?;
    let k = g.num_clients();
    let p = transition_matrix(g);
    let worst_tv = |m: &[Vec<f64>]| -> f64 {
        m.iter()
            .map(|row| {
                row.iter()
                    .zip(&pi)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / 2.0
            })
            .fold(0.0, f64::max)
    };
    // t = 0: rows of the identity.
    let mut power: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if worst_tv(&power) <= eps {
        return Ok(0);
    }
    for t in 1..=MIXING_STEP_CAP {
        let mut next = vec![vec![0.0; k]; k];
        for i in 0..k {
            for m in 0..k {
                let pim = power[i][m];
                if pim == 0.0 {
                    continue;
                }
                for j in 0..k {
                    next[i][j] += pim * p[m][j];
                }
            }
        }
        power = next;
        if worst_tv(&power) <= eps {
            return Ok(t);
        }
    }
    Err(Error::MixingCap(MIXING_STEP_CAP))
}

/// Which branch produced the visiting-probability bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoBranch {
    /// `(1/(d_max+1))^S`: the probability of any realizable S-hop path.
    PathProduct,
    /// `(d_min+1)/(4|E|)`: the post-mixing floor, valid once `S >= tau_bound`.
    Mixing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoBound {
    pub value: f64,
    pub branch: RhoBranch,
    /// Mixing-time upper bound used to decide branch eligibility.
    pub tau_bound: f64,
}

/// Lower bound on the probability that the walk sits at any given reachable
/// client after `s` hops.
pub fn rho_bound(g: &CommGraph, s: usize) -> Result<RhoBound> {
    if s == 0 {
        return Err(Error::InvalidInput("hop count must be at least 1".into()));
    }
    g.check_connected()?;
    let path_product = (1.0 / (g.max_degree() as f64 + 1.0)).powi(s as i32);
    let tau = mixing_time_bound(g)?;
    let mut best = RhoBound {
        value: path_product,
        branch: RhoBranch::PathProduct,
        tau_bound: tau,
    };
    if g.edge_count > 0 && (s as f64) >= tau {
        let mixing = (g.min_degree() as f64 + 1.0) / (4.0 * g.edge_count as f64);
        if mixing > best.value {
            best.value = mixing;
            best.branch = RhoBranch::Mixing;
        }
    }
    Ok(best)
}

/// Bundle of the walk quantities reported per graph.
#[derive(Debug, Clone)]
pub struct WalkAnalytics {
    pub stationary: Vec<f64>,
    pub lambda2: f64,
    pub spectral_gap: f64,
    pub pi_min: f64,
    /// `None` on a single node, where the Laplacian has one eigenvalue.
    pub algebraic_connectivity: Option<f64>,
    pub tau_bound: f64,
    /// Exact eps-mixing time, computed when requested and the graph is small
    /// enough for dense matrix powers.
    pub tau_exact: Option<usize>,
}

/// Compute the full analytics bundle for a connected graph. `eps` requests
/// the exact mixing time at that accuracy.
pub fn walk_analytics(g: &CommGraph, eps: Option<f64>) -> Result<WalkAnalytics> {
    let stationary = stationary_distribution(g)?;
    let pi_min = stationary.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda2 = second_eigenvalue(g)?;
    let tau_bound = 1.5 * (1.0 / pi_min).ln() / (1.0 - lambda2);
    let algebraic_connectivity = if g.num_clients() >= 2 {
        Some(algebraic_connectivity(g)?)
    } else {
        None
    };
    let tau_exact = match eps {
        Some(e) if g.num_clients() <= MIXING_MATRIX_LIMIT => Some(mixing_time_exact(g, e)?),
        _ => None,
    };
    Ok(WalkAnalytics {
        stationary,
        lambda2,
        spectral_gap: 1.0 - lambda2,
        pi_min,
        algebraic_connectivity,
        tau_bound,
        tau_exact,
    })
}
