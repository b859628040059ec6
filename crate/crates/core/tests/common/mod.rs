#![allow(dead_code)]

use fbgsp::{Graph, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Connected, non-bipartite graph: random spanning tree, a triangle on
/// nodes 0..3, and extra edges with probability `p`.
pub fn connected_graph(seed: u64, n: usize, p: f64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    if n >= 3 {
        edges.extend([(0, 1), (1, 2), (0, 2)]);
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(&edges, n).unwrap()
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Dense adjacency matrix built straight from the edge list.
pub fn dense_adjacency(g: &Graph) -> Matrix {
    let n = g.node_count();
    let mut a = Matrix::zeros(n, n);
    for (u, v) in g.edges() {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    a
}

/// Arbitrary edge lists (possibly with duplicates and both orientations)
/// without self-loops on `3..=max_n` nodes.
pub fn edge_lists(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (3..=max_n).prop_flat_map(|n| {
        let edge = (0..n, 0..n).prop_filter("no self-loops", |(u, v)| u != v);
        (Just(n), prop::collection::vec(edge, 0..3 * n))
    })
}

pub fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "max abs diff {d:e} exceeds {tol:e}");
}
