//! Weighted undirected graphs with per-node weights.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Undirected graph whose adjacency may carry a diagonal (intra-hyper-node weight).
///
/// Node weights count how many original nodes a node stands for; they are all
/// one on an input graph and grow as the graph is coarsened.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: CsrMatrix,
    node_weights: Vec<u64>,
}

impl Graph {
    /// Validates symmetry, non-negative edge weights and positive node weights.
    /// Explicitly stored zero entries are dropped.
    pub fn new(adjacency: CsrMatrix, node_weights: Vec<u64>) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::Validation(format!(
                "adjacency must be square, got {:?}",
                adjacency.shape()
            )));
        }
        if node_weights.len() != n {
            return Err(Error::Validation(format!(
                "{} node weights for {n} nodes",
                node_weights.len()
            )));
        }
        if let Some(i) = node_weights.iter().position(|&w| w == 0) {
            return Err(Error::Validation(format!("node {i} has weight 0")));
        }
        if let Some((r, c, v)) = adjacency.iter().find(|&(_, _, v)| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("edge ({r}, {c}) has invalid weight {v}")));
        }
        let adjacency = if adjacency.values().contains(&0.0) {
            CsrMatrix::from_triplets(n, n, adjacency.iter().filter(|&(_, _, v)| v != 0.0))?
        } else {
            adjacency
        };
        if !adjacency.is_symmetric() {
            return Err(Error::Validation("adjacency is not symmetric".into()));
        }
        Ok(Graph {
            adjacency,
            node_weights,
        })
    }

    /// Unit-node-weight graph from undirected `(u, v, weight)` edges, each listed once.
    ///
    /// `u == v` contributes a diagonal entry. Listing the same pair twice is an
    /// error unless both listings carry the same weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut seen = std::collections::HashMap::with_capacity(edges.len());
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for &(u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            let key = (u.min(v), u.max(v));
            match seen.get(&key) {
                Some(&prev) if prev == w => continue,
                Some(&prev) => {
                    return Err(Error::Validation(format!(
                        "edge ({u}, {v}) listed with conflicting weights {prev} and {w}"
                    )))
                }
                None => {
                    seen.insert(key, w);
                }
            }
            triplets.push((u, v, w));
            if u != v {
                triplets.push((v, u, w));
            }
        }
        Graph::new(CsrMatrix::from_triplets(n, n, triplets)?, vec![1; n])
    }

    /// A graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Graph {
            adjacency: CsrMatrix::zeros(n, n),
            node_weights: vec![1; n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.node_weights.len()
    }

    #[inline]
    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    #[inline]
    pub fn node_weights(&self) -> &[u64] {
        &self.node_weights
    }

    #[inline]
    pub fn edge_weight(&self, j: usize, k: usize) -> f64 {
        self.adjacency.get(j, k)
    }

    /// Neighbors of `v` in ascending order, excluding `v` itself.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (idx, vals) = self.adjacency.row(v);
        idx.iter()
            .zip(vals)
            .filter(move |(&u, _)| u != v)
            .map(|(&u, &w)| (u, w))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).count()
    }

    /// Undirected edges `(u, v, w)` with `u <= v`, diagonal included.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().filter(|&(r, c, _)| r <= c)
    }

    /// `1ᵀ A 1`, diagonal included.
    pub fn total_weight(&self) -> f64 {
        self.adjacency.values().iter().sum()
    }
}

/// Symmetrically normalized adjacency with self-loops, `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn normalized_adjacency(g: &Graph) -> CsrMatrix {
    let n = g.n();
    let with_loops = CsrMatrix::from_triplets(
        n,
        n,
        g.adjacency().iter().chain((0..n).map(|i| (i, i, 1.0))),
    )
    .expect("graph coordinates are in range");
    let degree = with_loops.row_sums();
    let values = with_loops
        .iter()
        .map(|(r, c, v)| v / (degree[r] * degree[c]).sqrt())
        .collect();
    with_loops.with_values(values)
}
