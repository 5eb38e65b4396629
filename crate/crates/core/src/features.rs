//! Structural node features for graphs without attributes.
//!
//! Columns are degree, harmonic closeness, normalized betweenness and
//! PageRank, in that order.

use std::collections::VecDeque;

use ndarray::Array2;
use rayon::prelude::*;

use crate::graph::Graph;

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_TOL: f64 = 1e-10;

pub fn degree(graph: &Graph) -> Vec<f64> {
    graph.degrees().into_iter().map(|d| d as f64).collect()
}

fn bfs_distances(graph: &Graph, source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.n()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &w in graph.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// `Σ_{v≠u} 1/d(u, v) / (n − 1)`; unreachable nodes contribute 0.
pub fn harmonic_closeness(graph: &Graph) -> Vec<f64> {
    let n = graph.n();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .into_par_iter()
        .map(|u| {
            let total: f64 = bfs_distances(graph, u)
                .into_iter()
                .filter(|&d| d != 0 && d != usize::MAX)
                .map(|d| 1.0 / d as f64)
                .sum();
            total / (n - 1) as f64
        })
        .collect()
}

/// Brandes dependency accumulation from one source (ordered pairs).
fn brandes_source(graph: &Graph, s: usize) -> Vec<f64> {
    let n = graph.n();
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    sigma[s] = 1.0;
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in graph.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    for &w in order.iter().rev() {
        for &v in graph.neighbors(w) {
            if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
        }
    }
    delta[s] = 0.0;
    delta
}

/// Betweenness as a count over unordered pairs `{s, t}`: the sum of the
/// fractions of shortest `s`–`t` paths through each node.
pub fn betweenness_unnormalized(graph: &Graph) -> Vec<f64> {
    let n = graph.n();
    let per_source: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| brandes_source(graph, s)).collect();
    let mut total = vec![0.0; n];
    for delta in &per_source {
        for (t, d) in total.iter_mut().zip(delta) {
            *t += d;
        }
    }
    total.iter_mut().for_each(|t| *t /= 2.0);
    total
}

/// Betweenness divided by the `(n−1)(n−2)/2` pairs a node can sit between.
pub fn betweenness(graph: &Graph) -> Vec<f64> {
    let n = graph.n();
    let mut b = betweenness_unnormalized(graph);
    if n > 2 {
        let scale = ((n - 1) * (n - 2)) as f64 / 2.0;
        b.iter_mut().for_each(|x| *x /= scale);
    }
    b
}

/// Power iteration with damping 0.85; mass of dangling nodes is spread
/// uniformly. Stops when the L1 change drops below `1e-10`.
pub fn pagerank(graph: &Graph) -> Vec<f64> {
    let n = graph.n();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut pr = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..10_000 {
        let dangling: f64 = (0..n).filter(|&u| graph.degree(u) == 0).map(|u| pr[u]).sum();
        let base = (1.0 - PAGERANK_DAMPING) / nf + PAGERANK_DAMPING * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for (u, &p) in pr.iter().enumerate() {
            let deg = graph.degree(u);
            if deg > 0 {
                let share = PAGERANK_DAMPING * p / deg as f64;
                for &w in graph.neighbors(u) {
                    next[w] += share;
                }
            }
        }
        let change: f64 = pr.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pr, &mut next);
        if change < PAGERANK_TOL {
            break;
        }
    }
    let total: f64 = pr.iter().sum();
    pr.iter_mut().for_each(|x| *x /= total);
    pr
}

/// `n × 4` matrix: degree, harmonic closeness, betweenness, PageRank.
pub fn centrality_features(graph: &Graph) -> Array2<f64> {
    let cols = [
        degree(graph),
        harmonic_closeness(graph),
        betweenness(graph),
        pagerank(graph),
    ];
    Array2::from_shape_fn((graph.n(), 4), |(i, j)| cols[j][i])
}

/// Zero mean and unit (population) variance per column; constant columns
/// become zero.
pub fn standardize_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    let n = x.nrows() as f64;
    if x.nrows() == 0 {
        return out;
    }
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}
