//! Seeded generators for the small benchmark regimes: a group-meeting
//! network, a branching infection tree with inherited features, and a
//! class-structured contact network.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::features::{centrality_features, standardize_columns};
use crate::graph::{canonical, Graph};

/// Parameters of the group-meeting generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MeetingsParams {
    pub nodes: usize,
    pub edges: usize,
    pub communities: usize,
    /// Chance that a meeting draws members from two communities.
    pub cross_prob: f64,
    pub min_group: usize,
    pub max_group: usize,
}

impl Default for MeetingsParams {
    fn default() -> Self {
        MeetingsParams {
            nodes: 101,
            edges: 256,
            communities: 8,
            cross_prob: 0.15,
            min_group: 2,
            max_group: 5,
        }
    }
}

/// Union of small cliques ("meetings"), mostly inside one community, until
/// the target edge count is reached. Every node attends at least one
/// meeting. Features are the standardized centralities.
pub fn meetings_like(params: &MeetingsParams, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.nodes;
    let community: Vec<usize> = (0..n).map(|u| u * params.communities / n).collect();
    let members: Vec<Vec<usize>> = (0..params.communities)
        .map(|c| (0..n).filter(|&u| community[u] == c).collect())
        .collect();
    let mut edges = BTreeSet::new();
    let mut attended = vec![false; n];

    let add_meeting = |group: &[usize], edges: &mut BTreeSet<(usize, usize)>, limit: usize| {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                if edges.len() >= limit {
                    return;
                }
                if a != b {
                    edges.insert(canonical(a, b));
                }
            }
        }
    };

    let mut cursor = 0;
    while edges.len() < params.edges {
        let size = rng.random_range(params.min_group..=params.max_group);
        // Walk through nodes that have not met yet so that none stays
        // isolated, then sample freely.
        while cursor < n && attended[cursor] {
            cursor += 1;
        }
        let anchor = if cursor < n { cursor } else { rng.random_range(0..n) };
        let home = community[anchor];
        let mut group = vec![anchor];
        while group.len() < size {
            let c = if rng.random::<f64>() < params.cross_prob {
                rng.random_range(0..params.communities)
            } else {
                home
            };
            let pool = &members[c];
            let cand = pool[rng.random_range(0..pool.len())];
            if !group.contains(&cand) {
                group.push(cand);
            }
        }
        for &u in &group {
            attended[u] = true;
        }
        add_meeting(&group, &mut edges, params.edges);
    }
    let g = Graph::new(n, edges)?;
    let x = standardize_columns(&centrality_features(&g));
    g.with_features(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub nodes: usize,
    pub feature_dim: usize,
    /// Correlation between a child's features and its parent's.
    pub inheritance: f64,
    /// Mean number of secondary infections per case.
    pub mean_offspring: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            nodes: 1044,
            feature_dim: 100,
            inheritance: 0.9,
            mean_offspring: 3.0,
        }
    }
}

/// Breadth-first branching process: each case infects a geometric number
/// of new cases until `nodes` are reached. Features start Gaussian at the
/// root and mutate along each transmission, `x_child = ρ·x_parent +
/// sqrt(1−ρ²)·noise`, so every node keeps unit marginal variance.
pub fn infection_tree(params: &TreeParams, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.nodes;
    let d = params.feature_dim;
    let rho = params.inheritance;
    let noise = (1.0 - rho * rho).max(0.0).sqrt();
    let mut x = Array2::<f64>::zeros((n, d));
    for j in 0..d {
        x[[0, j]] = StandardNormal.sample(&mut rng);
    }
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut next = 1;
    let mut frontier = 0;
    // Geometric offspring with the requested mean.
    let p_stop = 1.0 / (1.0 + params.mean_offspring);
    while next < n {
        let parent = frontier.min(next - 1);
        let mut children = 0;
        while rng.random::<f64>() >= p_stop {
            children += 1;
        }
        // Keep the process alive if the frontier would die out.
        if frontier + 1 >= next && children == 0 {
            children = 1;
        }
        for _ in 0..children {
            if next >= n {
                break;
            }
            edges.push((parent, next));
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[[next, j]] = rho * x[[parent, j]] + noise * e;
            }
            next += 1;
        }
        frontier += 1;
    }
    Graph::new(n, edges)?.with_features(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactParams {
    pub nodes: usize,
    pub class_size: usize,
    /// Contact probability inside a class.
    pub p_in: f64,
    /// Contact probability between classes.
    pub p_out: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            nodes: 300,
            class_size: 25,
            p_in: 0.2,
            p_out: 0.004,
        }
    }
}

/// Classes with dense internal contact and sparse mixing between them.
/// The graph carries no features.
pub fn contact_network(params: &ContactParams, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.nodes;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let same = u / params.class_size == v / params.class_size;
            let p = if same { params.p_in } else { params.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meetings_shape() {
        let g = meetings_like(&MeetingsParams::default(), 1).unwrap();
        assert_eq!(g.n(), 101);
        assert_eq!(g.m(), 256);
        assert_eq!(g.features().unwrap().ncols(), 4);
        assert!(g.degrees().iter().all(|&d| d > 0));
        assert_eq!(g, meetings_like(&MeetingsParams::default(), 1).unwrap());
    }

    #[test]
    fn tree_shape() {
        let p = TreeParams {
            feature_dim: 8,
            ..TreeParams::default()
        };
        let g = infection_tree(&p, 2).unwrap();
        assert_eq!(g.n(), 1044);
        assert_eq!(g.m(), 1043);
        assert_eq!(crate::complex::build_complex(&g).triangle_count(), 0);
        // Connected: a BFS from the root reaches everyone.
        let closeness = crate::features::harmonic_closeness(&g);
        assert!(closeness.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn contact_network_has_classes() {
        let g = contact_network(&ContactParams::default(), 3).unwrap();
        assert_eq!(g.n(), 300);
        let inside = g.edges().iter().filter(|(u, v)| u / 25 == v / 25).count();
        assert!(inside * 2 > g.m());
    }
}
