//! Undirected simple graphs plus the plain-text formats they are read from.
//!
//! Edge lists are one edge per line as two whitespace-separated zero-based
//! node ids; `#` starts a comment line. Feature files are header-less CSV
//! where row `i` holds the features of node `i`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders a node pair so that the smaller id comes first.
#[inline]
pub fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// An undirected graph without self-loops or parallel edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Option<Array2<f64>>,
}

impl Graph {
    /// Builds a graph on `n` nodes. Pairs are canonicalised, sorted and
    /// deduplicated; self-loops and out-of-range endpoints are rejected.
    pub fn new<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut list = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            list.push(canonical(u, v));
        }
        list.sort_unstable();
        list.dedup();

        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &list {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Graph {
            n,
            edges: list,
            neighbors,
            features: None,
        })
    }

    /// Attaches an `n × d` feature matrix.
    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows, graph has {} nodes",
                features.nrows(),
                self.n
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(u, v)` with `u < v`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> Option<&Array2<f64>> {
        self.features.as_ref()
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// Number of unordered node pairs that are not edges.
    pub fn non_edge_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2 - self.m()
    }

    /// Dense symmetric 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Same node set, different edge set; features are carried over.
    pub fn with_edges<I>(&self, edges: I) -> Result<Graph>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Graph::new(self.n, edges)?;
        g.features = self.features.clone();
        Ok(g)
    }

    /// Drops `removed` nodes and their incident edges. The survivors are
    /// re-indexed in increasing order; the returned vector maps new ids to
    /// old ids.
    pub fn remove_nodes(&self, removed: &[usize]) -> (Graph, Vec<usize>) {
        let gone: HashSet<usize> = removed.iter().copied().collect();
        let kept: Vec<usize> = (0..self.n).filter(|u| !gone.contains(u)).collect();
        let mut new_id = vec![usize::MAX; self.n];
        for (i, &old) in kept.iter().enumerate() {
            new_id[old] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(u, v)| !gone.contains(u) && !gone.contains(v))
            .map(|&(u, v)| (new_id[u], new_id[v]));
        let mut g = Graph::new(kept.len(), edges).expect("re-indexed edges stay valid");
        if let Some(x) = &self.features {
            g.features = Some(x.select(ndarray::Axis(0), &kept));
        }
        (g, kept)
    }

    /// Serialises the edge set in the edge-list format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.m() * 12);
        for &(u, v) in &self.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }
}

/// Parses an edge-list file. Returns the raw pairs (not yet deduplicated)
/// in file order.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next = |what: &str| -> Result<usize> {
            let tok = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("missing {what} node id"),
            })?;
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid node id {tok:?}"),
            })
        };
        let u = next("first")?;
        let v = next("second")?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected exactly two node ids".into(),
            });
        }
        if u == v {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("self-loop at node {u}"),
            });
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Parses a header-less CSV feature file into an `n × d` matrix.
pub fn parse_features_csv(text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split(',') {
            let tok = tok.trim();
            let x: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("invalid number {tok:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("non-finite value {tok:?}"),
                });
            }
            values.push(x);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {expected} columns, found {w}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row widths checked"))
}

/// Writes a feature matrix as header-less CSV.
pub fn features_to_csv(x: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Builds a graph from edge-list text; the node count is one past the
/// largest id seen, or `min_nodes` if that is larger.
pub fn graph_from_edge_list(text: &str, min_nodes: usize) -> Result<Graph> {
    let pairs = parse_edge_list(text)?;
    let n = pairs
        .iter()
        .map(|&(u, v)| u.max(v) + 1)
        .max()
        .unwrap_or(0)
        .max(min_nodes);
    Graph::new(n, pairs)
}

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const STATS_FILE: &str = "stats.json";

/// Node, edge and feature counts of a dataset bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleStats {
    pub n: usize,
    pub m: usize,
    pub q: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).at(path))
}

/// Reads `edges.txt` and `features.csv` from a bundle directory. The node
/// count is the number of feature rows.
pub fn load_bundle(dir: &Path) -> Result<Graph> {
    let edges_path = dir.join(EDGES_FILE);
    let features_path = dir.join(FEATURES_FILE);
    let x = parse_features_csv(&read_text(&features_path)?).map_err(|e| e.at(&features_path))?;
    let pairs = parse_edge_list(&read_text(&edges_path)?).map_err(|e| e.at(&edges_path))?;
    let g = Graph::new(x.nrows(), pairs).map_err(|e| e.at(&edges_path))?;
    g.with_features(x).map_err(|e| e.at(&features_path))
}

/// Writes a featured graph as a bundle and returns its stats.
pub fn write_bundle(dir: &Path, graph: &Graph) -> Result<BundleStats> {
    let x = graph
        .features()
        .ok_or_else(|| Error::InvalidArgument("graph has no node features".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))?;
    let stats = BundleStats {
        n: graph.n(),
        m: graph.m(),
        q: x.ncols(),
    };
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::from(e).at(path))
    };
    write(EDGES_FILE, graph.to_edge_list())?;
    write(FEATURES_FILE, features_to_csv(x))?;
    write(
        STATS_FILE,
        serde_json::to_string_pretty(&stats).expect("plain struct") + "\n",
    )?;
    Ok(stats)
}
