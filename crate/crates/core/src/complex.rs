//! Oriented clique complexes up to dimension two and their signed boundary
//! matrices.
//!
//! Every simplex is oriented by ascending node order. Triangles are all
//! 3-cliques of the input graph.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// `⌈frac · count⌉`, guarded against floating-point noise such as
/// `0.2 · 100 = 20.000000000000004`.
pub fn ceil_fraction(frac: f64, count: usize) -> usize {
    let x = frac * count as f64;
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        x.ceil() as usize
    }
}

/// Nodes, oriented edges `[u, v]` (`u < v`) and oriented triangles
/// `[u, v, w]` (`u < v < w`), each with a stable index.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplicialComplex {
    n: usize,
    edges: Vec<[usize; 2]>,
    triangles: Vec<[usize; 3]>,
    edge_index: HashMap<(usize, usize), usize>,
}

impl SimplicialComplex {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Index of the edge `{u, v}` in either orientation.
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edge_index.get(&key).copied()
    }

    /// True when every face of every stored simplex is stored too.
    pub fn is_closed(&self) -> bool {
        self.edges.iter().all(|&[u, v]| u < v && v < self.n)
            && self.triangles.iter().all(|&[u, v, w]| {
                self.edge_index(u, v).is_some() && self.edge_index(u, w).is_some() && self.edge_index(v, w).is_some()
            })
    }
}

/// Builds the clique complex truncated at dimension two.
pub fn build_complex(graph: &Graph) -> SimplicialComplex {
    let edges: Vec<[usize; 2]> = graph.edges().iter().map(|&(u, v)| [u, v]).collect();
    let edge_index = edges.iter().enumerate().map(|(i, &[u, v])| ((u, v), i)).collect();

    // For each edge (u, v), the common neighbours w > v close a triangle.
    // Walking edges in lexicographic order and w ascending yields the
    // triangles already sorted.
    let mut triangles = Vec::new();
    for &[u, v] in &edges {
        let (a, b) = (graph.neighbors(u), graph.neighbors(v));
        let (mut i, mut j) = (a.partition_point(|&x| x <= v), b.partition_point(|&x| x <= v));
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    triangles.push([u, v, a[i]]);
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    SimplicialComplex {
        n: graph.n(),
        edges,
        triangles,
        edge_index,
    }
}

/// Sparse ±1 matrix of a boundary operator. Entries are stored column by
/// column, rows ascending within a column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedIncidence {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, i8)>,
}

impl SignedIncidence {
    /// The zero operator between spaces of the given sizes (e.g. `B0`).
    pub fn zero(rows: usize, cols: usize) -> Self {
        SignedIncidence {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.rows, self.cols));
        for &(r, c, s) in &self.entries {
            a[[r, c]] = f64::from(s);
        }
        a
    }

    /// Column sums in exact integer arithmetic.
    pub fn column_sums(&self) -> Vec<i64> {
        let mut sums = vec![0i64; self.cols];
        for &(_, c, s) in &self.entries {
            sums[c] += i64::from(s);
        }
        sums
    }

    /// Nonzero entries of `self · other`, computed exactly.
    pub fn product(&self, other: &SignedIncidence) -> Result<BTreeMap<(usize, usize), i64>> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}×{} by {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut by_col: Vec<Vec<(usize, i64)>> = vec![Vec::new(); self.cols];
        for &(r, c, s) in &self.entries {
            by_col[c].push((r, i64::from(s)));
        }
        let mut out = BTreeMap::new();
        for &(k, j, s) in &other.entries {
            for &(i, t) in &by_col[k] {
                *out.entry((i, j)).or_insert(0) += t * i64::from(s);
            }
        }
        out.retain(|_, v| *v != 0);
        Ok(out)
    }

    /// `Bᵀ B` as a dense matrix (cols × cols), accumulated row by row so
    /// the cost is proportional to the squared row occupancy.
    pub fn gram_cols(&self) -> Array2<f64> {
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.rows];
        for &(r, c, s) in &self.entries {
            by_row[r].push((c, f64::from(s)));
        }
        let mut g = Array2::zeros((self.cols, self.cols));
        for row in &by_row {
            for &(a, sa) in row {
                for &(b, sb) in row {
                    g[[a, b]] += sa * sb;
                }
            }
        }
        g
    }

    /// `B Bᵀ` as a dense matrix (rows × rows).
    pub fn gram_rows(&self) -> Array2<f64> {
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cols];
        for &(r, c, s) in &self.entries {
            by_col[c].push((r, f64::from(s)));
        }
        let mut g = Array2::zeros((self.rows, self.rows));
        for col in &by_col {
            for &(a, sa) in col {
                for &(b, sb) in col {
                    g[[a, b]] += sa * sb;
                }
            }
        }
        g
    }
}

/// Node-to-edge boundary matrix `B1` (n × m): edge `[u, v]` has −1 at
/// row `u` and +1 at row `v`.
pub fn incidence_b1(complex: &SimplicialComplex) -> SignedIncidence {
    let mut entries = Vec::with_capacity(2 * complex.edge_count());
    for (j, &[u, v]) in complex.edges.iter().enumerate() {
        entries.push((u, j, -1));
        entries.push((v, j, 1));
    }
    SignedIncidence {
        rows: complex.node_count(),
        cols: complex.edge_count(),
        entries,
    }
}

/// Edge-to-triangle boundary matrix `B2` (m × q): triangle `[u, v, w]`
/// has +1 at `[v, w]`, −1 at `[u, w]` and +1 at `[u, v]`.
pub fn incidence_b2(complex: &SimplicialComplex) -> SignedIncidence {
    let mut entries = Vec::with_capacity(3 * complex.triangle_count());
    for (j, &[u, v, w]) in complex.triangles.iter().enumerate() {
        let idx = |a, b| complex.edge_index(a, b).expect("closed complex");
        let mut col = [(idx(u, v), 1i8), (idx(u, w), -1), (idx(v, w), 1)];
        col.sort_unstable();
        entries.extend(col.iter().map(|&(r, s)| (r, j, s)));
    }
    SignedIncidence {
        rows: complex.edge_count(),
        cols: complex.triangle_count(),
        entries,
    }
}

/// Keeps `⌈ε·m⌉` edges drawn uniformly without replacement.
pub fn sample_edges(graph: &Graph, epsilon: f64, seed: u64) -> Result<Graph> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "edge sampling fraction must lie in (0, 1], got {epsilon}"
        )));
    }
    let m = graph.m();
    let keep = ceil_fraction(epsilon, m).min(m);
    if keep == m {
        return Ok(graph.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, m, keep).into_vec();
    picked.sort_unstable();
    graph.with_edges(picked.into_iter().map(|i| graph.edges()[i]))
}
