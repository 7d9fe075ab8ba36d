//! Undirected interaction topology.
//!
//! Self-loops are never stored; every node belongs to its own inclusive
//! neighbourhood instead. Neighbourhoods are kept sorted ascending so every
//! downstream sum runs in a fixed order.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct Graph {
    n: usize,
    adjacency: Vec<bool>,
    edges: Vec<(usize, usize)>,
    inclusive: Vec<Vec<usize>>,
}

/// On-disk form: node count plus an edge list with `i < j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphRecord> for Graph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        Graph::from_edges(r.n, &r.edges)
    }
}

impl From<Graph> for GraphRecord {
    fn from(g: Graph) -> Self {
        GraphRecord {
            n: g.n,
            edges: g.edges,
        }
    }
}

impl Graph {
    /// Build a graph from undirected edges. Duplicates collapse; self-loops
    /// and out-of-range endpoints are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut adjacency = vec![false; n * n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange {
                    index: a.max(b),
                    n,
                });
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            adjacency[a * n + b] = true;
            adjacency[b * n + a] = true;
        }
        Ok(Self::from_adjacency(n, adjacency))
    }

    fn from_adjacency(n: usize, adjacency: Vec<bool>) -> Self {
        let mut edges = Vec::new();
        let mut inclusive = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j || adjacency[i * n + j] {
                    inclusive[i].push(j);
                }
                if i < j && adjacency[i * n + j] {
                    edges.push((i, j));
                }
            }
        }
        Graph {
            n,
            adjacency,
            edges,
            inclusive,
        }
    }

    pub fn single_node() -> Self {
        Self::from_adjacency(1, vec![false])
    }

    /// Path graph `0 – 1 – … – n−1`.
    pub fn chain(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("chain needs n >= 2, got {n}")));
        }
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Self::from_edges(n, &edges)
    }

    /// Path graph plus edges between masses two hops apart.
    pub fn chain_with_two_hop(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("chain needs n >= 2, got {n}")));
        }
        let mut edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        edges.extend((0..n.saturating_sub(2)).map(|i| (i, i + 2)));
        Self::from_edges(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("ring needs n >= 3, got {n}")));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Self::from_edges(n, &edges)
    }

    /// Connected Erdős–Rényi graph G(n, p).
    ///
    /// Each unordered pair is included independently with probability `p`;
    /// whole graphs are redrawn from the same seeded stream until one is
    /// connected, which keeps the conditional law of G(n, p) given
    /// connectivity.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64, max_retries: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("edge probability {p} outside [0, 1]")));
        }
        let mut rng = rng::seeded(seed);
        for _ in 0..max_retries.max(1) {
            let mut adjacency = vec![false; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        adjacency[i * n + j] = true;
                        adjacency[j * n + i] = true;
                    }
                }
            }
            let g = Self::from_adjacency(n, adjacency);
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(Error::MaxRetriesExceeded(max_retries.max(1)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.adjacency[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.inclusive[i].len() - 1
    }

    /// `{j : adjacency[i][j] = 1} ∪ {i}`, ascending.
    pub fn inclusive_neighborhood(&self, i: usize) -> Result<&[usize]> {
        self.inclusive
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange { index: i, n: self.n })
    }

    /// Inclusive neighbourhood without bounds checking on the caller side.
    pub(crate) fn hood(&self, i: usize) -> &[usize] {
        &self.inclusive[i]
    }

    /// Position of `j` within the inclusive neighbourhood of `i`.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.inclusive.get(i)?.binary_search(&j).ok()
    }

    /// Neighbours of `i` excluding `i` itself, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.inclusive[i].iter().copied().filter(move |&j| j != i)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut visited = 1;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    visited += 1;
                    queue.push_back(v);
                }
            }
        }
        visited == self.n
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if self.adjacency[i * self.n + j] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Combinatorial Laplacian `D − A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency_matrix();
        for i in 0..self.n {
            l[(i, i)] = self.degree(i) as f64;
        }
        l
    }
}
