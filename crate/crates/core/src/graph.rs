//! Communication graphs and Metropolis mixing matrices.
//!
//! Graphs are undirected, simple and connected. The mixing matrix built on
//! top of them is symmetric and doubly stochastic; its consensus contraction
//! factor `beta` is the spectral norm of `W - (1/N) 1 1^T`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QdgdError, Result};
use crate::rng;

/// Maximum number of Erdős–Rényi redraws before giving up on connectivity.
pub const MAX_GRAPH_ATTEMPTS: u32 = 10_000;

/// Row/column sum tolerance for a doubly stochastic matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

const EIGEN_TOL: f64 = 1e-10;
const EIGEN_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    num_nodes: usize,
    /// Unordered pairs stored as `(i, j)` with `i < j`.
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    /// Builds a graph from an edge list. Pairs may be given in either order;
    /// self-loops and out-of-range endpoints are rejected.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(QdgdError::InvalidInput("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(QdgdError::InvalidInput(format!("self-loop at node {i}")));
            }
            if i >= num_nodes || j >= num_nodes {
                return Err(QdgdError::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { num_nodes, edges: set })
    }

    pub fn path(num_nodes: usize) -> Self {
        Self::new(num_nodes, (1..num_nodes).map(|i| (i - 1, i))).expect("valid path")
    }

    pub fn complete(num_nodes: usize) -> Self {
        let edges = (0..num_nodes).flat_map(|i| (i + 1..num_nodes).map(move |j| (i, j)));
        Self::new(num_nodes, edges).expect("valid complete graph")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }
}

/// Breadth-first search from node 0.
pub fn is_connected(graph: &CommGraph) -> bool {
    let adj = graph.adjacency();
    let mut seen = vec![false; graph.num_nodes];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    reached == graph.num_nodes
}

/// Draws a connected G(N, p) graph.
///
/// Attempt `a` uses substream `a` of `seed`; draws are rejected until one is
/// connected, so the result is the Erdős–Rényi law conditioned on connectivity.
pub fn generate_er_graph(num_nodes: usize, link_prob: f64, seed: u64) -> Result<CommGraph> {
    if num_nodes < 2 {
        return Err(QdgdError::InvalidInput(format!(
            "Erdős–Rényi graph needs N >= 2, got {num_nodes}"
        )));
    }
    if !(link_prob > 0.0 && link_prob <= 1.0) {
        return Err(QdgdError::InvalidInput(format!(
            "link probability must lie in (0, 1], got {link_prob}"
        )));
    }
    for attempt in 0..MAX_GRAPH_ATTEMPTS {
        let mut rng = rng::substream(seed, attempt as u64);
        let mut edges = BTreeSet::new();
        for i in 0..num_nodes {
            for j in i + 1..num_nodes {
                if rng.random::<f64>() < link_prob {
                    edges.insert((i, j));
                }
            }
        }
        let graph = CommGraph { num_nodes, edges };
        if is_connected(&graph) {
            if attempt > 0 {
                log::debug!("connected graph found on attempt {attempt}");
            }
            return Ok(graph);
        }
    }
    Err(QdgdError::ConnectivityFailure { attempts: MAX_GRAPH_ATTEMPTS })
}

/// Symmetric doubly stochastic weight matrix together with its `beta`.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    beta: f64,
    degenerate: bool,
}

impl MixingMatrix {
    /// Validates a user-supplied weight matrix: square, symmetric, nonnegative,
    /// doubly stochastic, some positive diagonal entry, and `beta < 1`.
    ///
    /// `beta = 0` (exact averaging) is accepted but marked degenerate; see
    /// [`MixingMatrix::ensure_nondegenerate`].
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(QdgdError::InvalidInput(format!(
                "mixing matrix must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(QdgdError::AssumptionViolation(
                "mixing weights must be finite and nonnegative".into(),
            ));
        }
        for i in 0..n {
            let row: f64 = weights.row(i).sum();
            let col: f64 = weights.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(QdgdError::AssumptionViolation(format!(
                    "mixing matrix is not doubly stochastic (row {i} sums to {row}, column to {col})"
                )));
            }
        }
        if (0..n).all(|i| weights[(i, i)] <= STOCHASTIC_TOL) {
            return Err(QdgdError::AssumptionViolation(
                "mixing matrix has no positive diagonal entry".into(),
            ));
        }
        let beta = spectral_gap(&weights)?;
        if n > 1 && beta >= 1.0 - EIGEN_TOL {
            return Err(QdgdError::AssumptionViolation(format!(
                "beta = {beta} is not below 1 (graph disconnected?)"
            )));
        }
        let degenerate = beta <= EIGEN_TOL;
        if degenerate {
            log::warn!("mixing matrix is exact averaging (beta = 0)");
        }
        Ok(Self { weights, beta, degenerate })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Rejects the exact-averaging case, for callers that need `0 < beta`.
    pub fn ensure_nondegenerate(&self) -> Result<()> {
        if self.degenerate {
            Err(QdgdError::DegenerateGraph)
        } else {
            Ok(())
        }
    }
}

/// Metropolis weights: `1 / max(deg i, deg j)` on edges, the diagonal fills
/// each row to one.
pub fn metropolis_weights(graph: &CommGraph) -> Result<MixingMatrix> {
    if !is_connected(graph) {
        return Err(QdgdError::AssumptionViolation("communication graph is not connected".into()));
    }
    let n = graph.num_nodes();
    let deg = graph.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let wij = 1.0 / deg[i].max(deg[j]) as f64;
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        let wii = 1.0 - off;
        // Rounding can leave -1e-17 where the exact value is 0.
        w[(i, i)] = if wii.abs() <= STOCHASTIC_TOL { 0.0 } else { wii };
    }
    MixingMatrix::from_weights(w)
}

/// Largest absolute eigenvalue of `W - (1/N) 1 1^T` for a symmetric `W`.
pub fn spectral_gap(weights: &DMatrix<f64>) -> Result<f64> {
    let n = weights.nrows();
    if weights.ncols() != n {
        return Err(QdgdError::DimensionMismatch { expected: n, got: weights.ncols() });
    }
    let asym = (weights - weights.transpose()).amax();
    if asym > 1e-12 {
        return Err(QdgdError::InvalidInput(format!(
            "spectral gap needs a symmetric matrix (asymmetry {asym:e})"
        )));
    }
    let deflated = weights.map(|w| w - 1.0 / n as f64);
    let eig = nalgebra::SymmetricEigen::try_new(deflated, f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or_else(|| {
            QdgdError::NumericalFailure(format!(
                "symmetric eigensolver did not converge in {EIGEN_MAX_ITERS} iterations"
            ))
        })?;
    Ok(eig.eigenvalues.amax())
}

/// Structured record of a graph and its mixing matrix, used for run provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    /// Row-major `n * n` weights.
    pub weights: Vec<f64>,
    pub beta: f64,
}

impl GraphRecord {
    pub fn new(graph: &CommGraph, mixing: &MixingMatrix) -> Self {
        let n = graph.num_nodes();
        let w = mixing.weights();
        Self {
            n,
            edges: graph.edges().map(|(i, j)| [i, j]).collect(),
            weights: (0..n).flat_map(|i| (0..n).map(move |j| w[(i, j)])).collect(),
            beta: mixing.beta(),
        }
    }
}
