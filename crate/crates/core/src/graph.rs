//! Station grid topology, travel costs and the normalized propagation matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tapegrad::{normalized_with_scaling, TapeError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("neighborhood must be 4 or 8, got {0}")]
    Neighborhood(u8),
    #[error("edge cost must be positive and finite, got {0}")]
    Cost(f64),
    #[error("cost override ({0}, {1}) is not an edge of the grid")]
    NotAnEdge(usize, usize),
    #[error("graph is disconnected: no path between {0} and {1}")]
    Disconnected(usize, usize),
    #[error("adjacency must be square, symmetric and nonnegative")]
    InvalidAdjacency,
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Grid description as found in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    /// Column count for rectangular grids; defaults to `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default = "default_neighborhood")]
    pub neighborhood: u8,
    #[serde(default = "default_base_cost")]
    pub base_cost: f64,
    #[serde(default)]
    pub cost_overrides: Vec<(usize, usize, f64)>,
}

fn default_neighborhood() -> u8 {
    4
}

fn default_base_cost() -> f64 {
    1.0
}

impl GraphConfig {
    pub fn square(k: usize) -> Self {
        Self {
            k,
            cols: None,
            neighborhood: 4,
            base_cost: 1.0,
            cost_overrides: Vec::new(),
        }
    }

    pub fn build(&self) -> Result<Graph, GraphError> {
        let mut g = Graph::grid(self.k, self.cols.unwrap_or(self.k), self.neighborhood, self.base_cost)?;
        for &(i, j, cost) in &self.cost_overrides {
            g.set_cost(i, j, cost)?;
        }
        Ok(g)
    }
}

/// Undirected station graph with dense adjacency and per-edge travel cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    rows: usize,
    cols: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Tensor<f64>,
    edge_cost: Tensor<f64>,
}

/// Square `k × k` lattice with 4-neighborhood and uniform cost.
pub fn build_grid(k: usize, base_cost: f64) -> Result<Graph, GraphError> {
    Graph::grid(k, k, 4, base_cost)
}

impl Graph {
    /// Row-major `rows × cols` lattice.
    pub fn grid(rows: usize, cols: usize, neighborhood: u8, base_cost: f64) -> Result<Self, GraphError> {
        if rows == 0 || cols == 0 {
            return Err(GraphError::EmptyGrid { rows, cols });
        }
        if neighborhood != 4 && neighborhood != 8 {
            return Err(GraphError::Neighborhood(neighborhood));
        }
        if !(base_cost > 0.0 && base_cost.is_finite()) {
            return Err(GraphError::Cost(base_cost));
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
                if neighborhood == 8 && r + 1 < rows {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r + 1, c + 1)));
                    }
                    if c > 0 {
                        edges.push((id(r, c), id(r + 1, c - 1)));
                    }
                }
            }
        }
        edges.sort_unstable();
        let n = rows * cols;
        let mut adjacency = Tensor::zeros(n, n);
        let mut edge_cost = Tensor::zeros(n, n);
        for &(i, j) in &edges {
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
            edge_cost.set(i, j, base_cost);
            edge_cost.set(j, i, base_cost);
        }
        Ok(Self {
            rows,
            cols,
            edges,
            adjacency,
            edge_cost,
        })
    }

    /// Arbitrary undirected graph, mainly for tests.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGrid { rows: 0, cols: 0 });
        }
        let mut adjacency = Tensor::zeros(n, n);
        let mut edge_cost = Tensor::zeros(n, n);
        let mut list = Vec::new();
        for &(a, b, cost) in edges {
            if a == b || a >= n || b >= n {
                return Err(GraphError::NotAnEdge(a, b));
            }
            if !(cost > 0.0 && cost.is_finite()) {
                return Err(GraphError::Cost(cost));
            }
            let (i, j) = (a.min(b), a.max(b));
            if adjacency.at(i, j) == 0.0 {
                list.push((i, j));
            }
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
            edge_cost.set(i, j, cost);
            edge_cost.set(j, i, cost);
        }
        list.sort_unstable();
        Ok(Self {
            rows: 1,
            cols: n,
            edges: list,
            adjacency,
            edge_cost,
        })
    }

    pub fn set_cost(&mut self, i: usize, j: usize, cost: f64) -> Result<(), GraphError> {
        if i >= self.n() || j >= self.n() || self.adjacency.at(i, j) == 0.0 {
            return Err(GraphError::NotAnEdge(i, j));
        }
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(GraphError::Cost(cost));
        }
        self.edge_cost.set(i, j, cost);
        self.edge_cost.set(j, i, cost);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Directed edges: both orientations of every undirected edge, sorted.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .edges
            .iter()
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect();
        out.sort_unstable();
        out
    }

    pub fn adjacency(&self) -> &Tensor<f64> {
        &self.adjacency
    }

    pub fn edge_cost(&self) -> &Tensor<f64> {
        &self.edge_cost
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n() && j < self.n() && self.adjacency.at(i, j) != 0.0
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&j| self.adjacency.at(i, j) != 0.0)
    }

    /// Attention mask: graph neighbors plus self, row-major `n × n`.
    pub fn self_loop_mask(&self) -> Vec<bool> {
        let n = self.n();
        (0..n * n)
            .map(|idx| idx / n == idx % n || self.adjacency.data()[idx] != 0.0)
            .collect()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut adjacency = Tensor::zeros(n, n);
        let mut edge_cost = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                adjacency.set(perm[i], perm[j], self.adjacency.at(i, j));
                edge_cost.set(perm[i], perm[j], self.edge_cost.at(i, j));
            }
        }
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        edges.sort_unstable();
        Self {
            rows: self.rows,
            cols: self.cols,
            edges,
            adjacency,
            edge_cost,
        }
    }

    /// All-pairs shortest-path travel cost (Floyd–Warshall).
    pub fn shortest_path_costs(&self) -> Result<Tensor<f64>, GraphError> {
        let n = self.n();
        let mut dist = Tensor::filled(n, n, f64::INFINITY);
        for i in 0..n {
            dist.set(i, i, 0.0);
            for j in self.neighbors(i) {
                dist.set(i, j, self.edge_cost.at(i, j));
            }
        }
        for via in 0..n {
            for i in 0..n {
                let d_iv = dist.at(i, via);
                if d_iv.is_infinite() {
                    continue;
                }
                for j in 0..n {
                    let cand = d_iv + dist.at(via, j);
                    if cand < dist.at(i, j) {
                        dist.set(i, j, cand);
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if dist.at(i, j).is_infinite() {
                    return Err(GraphError::Disconnected(i, j));
                }
            }
        }
        Ok(dist)
    }

    pub fn propagation<S: Scalar>(&self) -> Result<PropagationMatrix<S>, GraphError> {
        normalize_adjacency(&self.adjacency.cast())
    }
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix<S>(Tensor<S>);

impl<S: Scalar> PropagationMatrix<S> {
    pub fn matrix(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_matrix(self) -> Tensor<S> {
        self.0
    }
}

/// Symmetric normalization with self-loops of any nonnegative symmetric
/// weight matrix (the 0/1 adjacency, a refined structure or a sampled mask).
pub fn normalize_adjacency<S: Scalar>(adj: &Tensor<S>) -> Result<PropagationMatrix<S>, GraphError> {
    let (n, m) = adj.dims()?;
    if n != m {
        return Err(GraphError::InvalidAdjacency);
    }
    for i in 0..n {
        for j in 0..n {
            let a = adj.at(i, j);
            if a < S::zero() || a != adj.at(j, i) {
                return Err(GraphError::InvalidAdjacency);
            }
        }
    }
    let (p, _) = normalized_with_scaling(adj)?;
    Ok(PropagationMatrix(p))
}
