//! Immutable undirected graphs in compressed adjacency form.
//!
//! Self-loops are never stored. The renormalized operators in
//! [`crate::spectral`] add the identity analytically, so a stored loop would
//! be counted twice.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph with sorted, deduplicated neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    row_offsets: Vec<usize>,
    neighbor_indices: Vec<usize>,
    edge_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub is_connected: bool,
    pub is_bipartite: bool,
    pub isolated_node_count: usize,
    pub component_count: usize,
}

impl Graph {
    /// Builds a graph from unordered index pairs. `(u, v)` and `(v, u)` denote the
    /// same edge; duplicates collapse.
    pub fn from_edges(edges: &[(usize, usize)], node_count: usize) -> Result<Self> {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); node_count];
        for &(u, v) in edges {
            for idx in [u, v] {
                if idx >= node_count {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        len: node_count,
                    });
                }
            }
            if u == v {
                return Err(Error::SelfLoopInInput(u));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }

        let mut row_offsets = Vec::with_capacity(node_count + 1);
        let mut neighbor_indices = Vec::new();
        row_offsets.push(0);
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
            neighbor_indices.extend_from_slice(row);
            row_offsets.push(neighbor_indices.len());
        }
        let edge_count = neighbor_indices.len() / 2;
        Ok(Self {
            row_offsets,
            neighbor_indices,
            edge_count,
        })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            row_offsets: vec![0; n + 1],
            neighbor_indices: Vec::new(),
            edge_count: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|i| self.degree(i)).collect()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn neighbor_indices(&self) -> &[usize] {
        &self.neighbor_indices
    }

    /// Sorted neighbors of `i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        if i >= self.node_count() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.node_count(),
            });
        }
        Ok(self.neighbors_unchecked(i))
    }

    pub(crate) fn neighbors_unchecked(&self, i: usize) -> &[usize] {
        &self.neighbor_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for u in 0..self.node_count() {
            for &v in self.neighbors_unchecked(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Connectivity and bipartiteness via breadth-first 2-coloring.
    pub fn diagnose(&self) -> GraphDiagnostics {
        let n = self.node_count();
        let mut color: Vec<Option<bool>> = vec![None; n];
        let mut is_bipartite = true;
        let mut component_count = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if color[start].is_some() {
                continue;
            }
            component_count += 1;
            color[start] = Some(false);
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                let cu = color[u].unwrap();
                for &v in self.neighbors_unchecked(u) {
                    match color[v] {
                        None => {
                            color[v] = Some(!cu);
                            queue.push_back(v);
                        }
                        Some(cv) if cv == cu => is_bipartite = false,
                        Some(_) => {}
                    }
                }
            }
        }
        GraphDiagnostics {
            is_connected: component_count <= 1,
            is_bipartite,
            isolated_node_count: (0..n).filter(|&i| self.degree(i) == 0).count(),
            component_count: component_count.max(1),
        }
    }
}
