//! Hodge Laplacians, block operators, random-walk powers, eigenprojectors
//! and the renormalised graph adjacency used by the GCN branch.
//!
//! Laplacians are stored densely; only incidences are sparse.

use std::fmt::Write as _;

use ndarray::{s, Array2, ArrayView2};

use crate::complex::{incidence_b1, incidence_b2, SignedIncidence, SimplicialComplex};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{self, matrix_power, Csr};

/// Symmetry tolerance for Laplacian-type operators.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue still accepted as "positive semidefinite".
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    L0,
    L1Down,
    L1Up,
    /// `L_k` for the given `k`.
    Hodge(usize),
    Block,
    ReducedBlock,
    AhlbRaw,
    AhlbNormalized,
    NormalizedGraph,
}

impl OperatorKind {
    /// Kinds that are symmetric PSD by construction.
    pub fn is_laplacian(self) -> bool {
        matches!(
            self,
            OperatorKind::L0
                | OperatorKind::L1Down
                | OperatorKind::L1Up
                | OperatorKind::Hodge(_)
                | OperatorKind::Block
                | OperatorKind::ReducedBlock
        )
    }
}

/// A dense square operator, optionally carrying the down/up split it was
/// assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub kind: OperatorKind,
    pub values: Array2<f64>,
    pub down: Option<Array2<f64>>,
    pub up: Option<Array2<f64>>,
}

impl OperatorMatrix {
    pub fn new(kind: OperatorKind, values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::Dimension(format!("operator must be square, got {r}×{c}")));
        }
        Ok(OperatorMatrix {
            kind,
            values,
            down: None,
            up: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Largest `|X − Xᵀ|` entry.
    pub fn asymmetry(&self) -> f64 {
        max_abs_diff(&self.values.view(), &self.values.t())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.dim() == 0 {
            return Ok(0.0);
        }
        Ok(linalg::symmetric_eigen(&self.values.view())?.min_value())
    }

    pub fn down_part(&self) -> Option<OperatorMatrix> {
        self.down.as_ref().map(|d| OperatorMatrix {
            kind: OperatorKind::L1Down,
            values: d.clone(),
            down: None,
            up: None,
        })
    }

    pub fn up_part(&self) -> Option<OperatorMatrix> {
        self.up.as_ref().map(|u| OperatorMatrix {
            kind: OperatorKind::L1Up,
            values: u.clone(),
            down: None,
            up: None,
        })
    }

    /// Plain-text dump: a `rows cols` header followed by one row per line.
    pub fn to_text(&self) -> String {
        matrix_to_text(&self.values.view())
    }
}

pub fn max_abs_diff(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn matrix_to_text(a: &ArrayView2<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", a.nrows(), a.ncols());
    for row in a.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the format written by [`matrix_to_text`].
pub fn matrix_from_text(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing dimension header".into(),
    })?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |tok: &str| {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            line: hl + 1,
            msg: format!("invalid dimension {tok:?}"),
        })
    };
    if dims.len() != 2 {
        return Err(Error::Parse {
            line: hl + 1,
            msg: "header must be `rows cols`".into(),
        });
    }
    let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let total = rows.checked_mul(cols).ok_or(Error::Parse {
        line: hl + 1,
        msg: "dimensions overflow".into(),
    })?;
    let mut values = Vec::with_capacity(total.min(1 << 20));
    let mut seen_rows = 0;
    for (idx, line) in lines {
        if seen_rows == rows {
            return Err(Error::Parse {
                line: idx + 1,
                msg: "more rows than declared".into(),
            });
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("invalid number {tok:?}"),
            })?;
            values.push(x);
        }
        if values.len() - before != cols {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {cols} values, found {}", values.len() - before),
            });
        }
        seen_rows += 1;
    }
    // Rows of a zero-column matrix are blank and were filtered out.
    if seen_rows != rows && cols != 0 {
        return Err(Error::Parse {
            line: hl + 1,
            msg: format!("declared {rows} rows, found {seen_rows}"),
        });
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row widths checked"))
}

/// `L_k = B_kᵀ B_k + B_{k+1} B_{k+1}ᵀ`. Pass [`SignedIncidence::zero`] for
/// `B_0` or for the operator above the top dimension.
pub fn hodge_k(k: usize, b_k: &SignedIncidence, b_k_plus_1: &SignedIncidence) -> Result<OperatorMatrix> {
    if b_k.cols != b_k_plus_1.rows {
        return Err(Error::Dimension(format!(
            "B_k has {} columns but B_(k+1) has {} rows",
            b_k.cols, b_k_plus_1.rows
        )));
    }
    let down = b_k.gram_cols();
    let up = b_k_plus_1.gram_rows();
    let values = &down + &up;
    let kind = match k {
        0 => OperatorKind::L0,
        _ => OperatorKind::Hodge(k),
    };
    Ok(OperatorMatrix {
        kind,
        values,
        down: Some(down),
        up: Some(up),
    })
}

/// The Laplacians a 2-complex supports.
#[derive(Debug, Clone)]
pub struct HodgeLaplacians {
    pub l0: OperatorMatrix,
    pub l1: OperatorMatrix,
    pub l2: OperatorMatrix,
}

impl HodgeLaplacians {
    pub fn l1_down(&self) -> OperatorMatrix {
        self.l1.down_part().expect("L1 carries its parts")
    }

    pub fn l1_up(&self) -> OperatorMatrix {
        self.l1.up_part().expect("L1 carries its parts")
    }
}

pub fn hodge_laplacians(complex: &SimplicialComplex) -> HodgeLaplacians {
    let b1 = incidence_b1(complex);
    let b2 = incidence_b2(complex);
    let b0 = SignedIncidence::zero(0, complex.node_count());
    let b3 = SignedIncidence::zero(complex.triangle_count(), 0);
    HodgeLaplacians {
        l0: hodge_k(0, &b0, &b1).expect("consistent shapes"),
        l1: hodge_k(1, &b1, &b2).expect("consistent shapes"),
        l2: hodge_k(2, &b2, &b3).expect("consistent shapes"),
    }
}

fn block_diag(mats: &[&Array2<f64>]) -> Array2<f64> {
    let total: usize = mats.iter().map(|m| m.nrows()).sum();
    let mut out = Array2::zeros((total, total));
    let mut at = 0;
    for m in mats {
        let d = m.nrows();
        out.slice_mut(s![at..at + d, at..at + d]).assign(m);
        at += d;
    }
    out
}

/// Block-diagonal stacking `diag{L_k1, …, L_kJ}`. When every input carries
/// its down/up parts the result carries their block-diagonal stacks too.
pub fn block_hodge(laplacians: &[OperatorMatrix], reduced: bool) -> Result<OperatorMatrix> {
    if laplacians.is_empty() {
        return Err(Error::InvalidArgument("block operator needs at least one block".into()));
    }
    let values = block_diag(&laplacians.iter().map(|l| &l.values).collect::<Vec<_>>());
    let parts = laplacians
        .iter()
        .map(|l| l.down.as_ref().zip(l.up.as_ref()))
        .collect::<Option<Vec<_>>>();
    let (down, up) = match parts {
        Some(p) => {
            let downs: Vec<_> = p.iter().map(|(d, _)| *d).collect();
            let ups: Vec<_> = p.iter().map(|(_, u)| *u).collect();
            (Some(block_diag(&downs)), Some(block_diag(&ups)))
        }
        None => (None, None),
    };
    Ok(OperatorMatrix {
        kind: if reduced {
            OperatorKind::ReducedBlock
        } else {
            OperatorKind::Block
        },
        values,
        down,
        up,
    })
}

/// Result of raising an operator to a power.
#[derive(Debug, Clone)]
pub struct OperatorPower {
    /// The r-fold product `X·X·…·X`.
    pub power: OperatorMatrix,
    /// `(L^down)^r + (L^up)^r`, when the operator carries its parts.
    pub decomposed: Option<Array2<f64>>,
    /// Largest entrywise gap between the two routes.
    pub max_deviation: Option<f64>,
}

pub fn power_operator(op: &OperatorMatrix, r: u32) -> Result<OperatorPower> {
    if r == 0 {
        return Err(Error::InvalidArgument("power must be at least 1".into()));
    }
    let product = matrix_power(&op.values.view(), r);
    let parts = op.down.as_ref().zip(op.up.as_ref()).map(|(d, u)| {
        let dr = matrix_power(&d.view(), r);
        let ur = matrix_power(&u.view(), r);
        (dr, ur)
    });
    let decomposed = parts.as_ref().map(|(d, u)| d + u);
    let max_deviation = decomposed.as_ref().map(|d| max_abs_diff(&d.view(), &product.view()));
    let (down, up) = match parts {
        Some((d, u)) => (Some(d), Some(u)),
        None => (None, None),
    };
    Ok(OperatorPower {
        power: OperatorMatrix {
            kind: op.kind,
            values: product,
            down,
            up,
        },
        decomposed,
        max_deviation,
    })
}

/// Orthonormal basis of the eigenspace of the `d2` largest eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// d1 × d2, orthonormal columns.
    pub basis: Array2<f64>,
}

impl Projector {
    pub fn identity(d: usize) -> Self {
        Projector { basis: Array2::eye(d) }
    }

    pub fn source_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Projects each row of `rows` (k × d1) to the target space (k × d2).
    pub fn project_rows(&self, rows: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.source_dim() {
            return Err(Error::Dimension(format!(
                "projector expects rows of length {}, got {}",
                self.source_dim(),
                rows.ncols()
            )));
        }
        Ok(rows.dot(&self.basis))
    }

    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.basis.t().dot(&self.basis);
        max_abs_diff(&g.view(), &Array2::eye(self.target_dim()).view())
    }
}

/// Eigenvectors of `op` for its `d2` largest eigenvalues, descending; ties
/// keep ascending original index. `d2 == dim` returns the identity basis.
pub fn projector_top(op: &OperatorMatrix, d2: usize) -> Result<Projector> {
    let d1 = op.dim();
    if d2 == 0 || d2 > d1 {
        return Err(Error::InvalidArgument(format!(
            "projector target dimension {d2} must lie in 1..={d1}"
        )));
    }
    if d2 == d1 {
        return Ok(Projector::identity(d1));
    }
    let eig = linalg::symmetric_eigen(&op.values.view())?;
    let mut order: Vec<usize> = (0..d1).collect();
    order.sort_by(|&i, &j| eig.values[j].total_cmp(&eig.values[i]).then(i.cmp(&j)));
    let mut basis = Array2::zeros((d1, d2));
    for (dst, &src) in order.iter().take(d2).enumerate() {
        basis.column_mut(dst).assign(&eig.vectors.column(src));
    }
    Ok(Projector { basis })
}

/// `D_v^{-1/2} (A + I) D_v^{-1/2}` with `D_v` the degree matrix of `A + I`.
pub fn normalized_graph_laplacian(graph: &Graph) -> OperatorMatrix {
    OperatorMatrix {
        kind: OperatorKind::NormalizedGraph,
        values: normalized_adjacency_csr(graph).to_dense(),
        down: None,
        up: None,
    }
}

/// Sparse form of [`normalized_graph_laplacian`].
pub fn normalized_adjacency_csr(graph: &Graph) -> Csr {
    let n = graph.n();
    let inv_sqrt: Vec<f64> = (0..n).map(|u| 1.0 / ((graph.degree(u) + 1) as f64).sqrt()).collect();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for u in 0..n {
        let mut row: Vec<usize> = graph.neighbors(u).to_vec();
        row.push(u);
        row.sort_unstable();
        for v in row {
            indices.push(v);
            values.push(inv_sqrt[u] * inv_sqrt[v]);
        }
        indptr.push(indices.len());
    }
    Csr {
        rows: n,
        cols: n,
        indptr,
        indices,
        values,
    }
}

/// Outcome of the Schur-complement PSD test on
/// `[[L_a, F], [Fᵀ, L_b]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurReport {
    /// `Fᵀ = L_b L_b^† Fᵀ`
    pub range_condition: bool,
    /// `L_a − F L_b^† Fᵀ ⪰ 0`
    pub schur_complement_psd: bool,
    /// Both of the above.
    pub schur_verdict: bool,
    /// Smallest eigenvalue of the assembled matrix is ≥ −tolerance.
    pub direct_verdict: bool,
    pub min_eigenvalue: f64,
    pub schur_min_eigenvalue: f64,
    pub range_residual: f64,
}

impl SchurReport {
    pub fn agree(&self) -> bool {
        self.schur_verdict == self.direct_verdict
    }
}

/// Tests PSD-ness of the block matrix two ways: via the generalised Schur
/// complement with respect to `L_b` and via its smallest eigenvalue.
/// `tol` is relative to the largest block magnitude.
pub fn check_psd_schur(
    l_a: &ArrayView2<f64>,
    off: &ArrayView2<f64>,
    l_b: &ArrayView2<f64>,
    tol: f64,
) -> Result<SchurReport> {
    let (d1, d2) = (l_a.nrows(), l_b.nrows());
    if l_a.ncols() != d1 || l_b.ncols() != d2 || off.dim() != (d1, d2) {
        return Err(Error::Dimension(format!(
            "blocks {:?}, {:?}, {:?} do not assemble",
            l_a.dim(),
            off.dim(),
            l_b.dim()
        )));
    }
    let scale = [l_a, off, l_b]
        .iter()
        .flat_map(|m| m.iter())
        .fold(1.0f64, |m, x| m.max(x.abs()));
    let abs_tol = tol * scale;

    let pinv_b = linalg::pinv_symmetric(l_b, 1e-10)?;
    let off_t = off.t();
    let projected = l_b.dot(&pinv_b).dot(&off_t);
    let range_residual = max_abs_diff(&projected.view(), &off_t);
    // Projection round-off grows with the conditioning of L_b, so the range
    // test gets the square root of the eigenvalue tolerance.
    let range_condition = range_residual <= tol.sqrt() * scale;

    let schur = l_a.to_owned() - off.dot(&pinv_b).dot(&off_t);
    let schur_sym = (&schur + &schur.t()) * 0.5;
    let schur_min = if d1 == 0 {
        0.0
    } else {
        linalg::symmetric_eigen(&schur_sym.view())?.min_value()
    };
    let schur_complement_psd = schur_min >= -abs_tol;

    let mut full = Array2::zeros((d1 + d2, d1 + d2));
    full.slice_mut(s![..d1, ..d1]).assign(l_a);
    full.slice_mut(s![..d1, d1..]).assign(off);
    full.slice_mut(s![d1.., ..d1]).assign(&off_t);
    full.slice_mut(s![d1.., d1..]).assign(l_b);
    let min_eigenvalue = if d1 + d2 == 0 {
        0.0
    } else {
        linalg::symmetric_eigen(&full.view())?.min_value()
    };
    Ok(SchurReport {
        range_condition,
        schur_complement_psd,
        schur_verdict: range_condition && schur_complement_psd,
        direct_verdict: min_eigenvalue >= -abs_tol,
        min_eigenvalue,
        schur_min_eigenvalue: schur_min,
        range_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::build_complex;
    use ndarray::arr2;

    fn k3() -> Graph {
        Graph::new(3, [(0, 1), (0, 2), (1, 2)]).unwrap()
    }

    #[test]
    fn l1_of_filled_triangle() {
        let h = hodge_laplacians(&build_complex(&k3()));
        assert_eq!(h.l1.values, Array2::<f64>::eye(3) * 3.0);
        assert_eq!(
            h.l1_down().values,
            arr2(&[[2.0, 1.0, -1.0], [1.0, 2.0, 1.0], [-1.0, 1.0, 2.0]])
        );
        assert_eq!(
            h.l1_up().values,
            arr2(&[[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, 1.0]])
        );
    }

    #[test]
    fn l0_is_degree_minus_adjacency() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3), (1, 3)]).unwrap();
        let h = hodge_laplacians(&build_complex(&g));
        let a = g.adjacency_matrix();
        let d = Array2::from_diag(&a.sum_axis(ndarray::Axis(1)));
        assert_eq!(h.l0.values, d - a);
        assert_eq!(h.l0.kind, OperatorKind::L0);
    }

    #[test]
    fn hodge_rejects_mismatch() {
        let b1 = SignedIncidence::zero(3, 2);
        let b2 = SignedIncidence::zero(3, 1);
        assert!(hodge_k(1, &b1, &b2).is_err());
    }

    #[test]
    fn block_of_k3() {
        let h = hodge_laplacians(&build_complex(&k3()));
        let b = block_hodge(&[h.l0.clone(), h.l1.clone()], true).unwrap();
        assert_eq!(b.dim(), 6);
        assert_eq!(b.values.slice(s![..3, ..3]), h.l0.values);
        assert_eq!(b.values.slice(s![3.., 3..]), Array2::<f64>::eye(3) * 3.0);
        assert!(b.values.slice(s![..3, 3..]).iter().all(|&x| x == 0.0));
        assert_eq!(
            block_hodge(std::slice::from_ref(&h.l1), false).unwrap().values,
            h.l1.values
        );
        assert!(block_hodge(&[], false).is_err());
    }

    #[test]
    fn power_of_filled_triangle() {
        let h = hodge_laplacians(&build_complex(&k3()));
        assert!(power_operator(&h.l1, 0).is_err());
        let p1 = power_operator(&h.l1, 1).unwrap();
        assert_eq!(p1.power.values, h.l1.values);
        let p2 = power_operator(&h.l1, 2).unwrap();
        assert_eq!(p2.power.values, Array2::<f64>::eye(3) * 9.0);
        assert!(p2.max_deviation.unwrap() < 1e-12);
    }

    #[test]
    fn projector_cases() {
        let op = OperatorMatrix::new(
            OperatorKind::Hodge(1),
            Array2::from_diag(&ndarray::arr1(&[5.0, 3.0, 1.0])),
        )
        .unwrap();
        let p = projector_top(&op, 2).unwrap();
        assert!((p.basis[[0, 0]].abs() - 1.0).abs() < 1e-12);
        assert!((p.basis[[1, 1]].abs() - 1.0).abs() < 1e-12);
        assert!(p.basis.row(2).iter().all(|x| x.abs() < 1e-12));
        let id = projector_top(&op, 3).unwrap();
        let rows = arr2(&[[1.0, 2.0, 3.0]]);
        assert_eq!(id.project_rows(&rows.view()).unwrap(), rows);
        assert!(projector_top(&op, 4).is_err());
        assert!(projector_top(&op, 0).is_err());
    }

    #[test]
    fn normalized_laplacian_small_cases() {
        let single = Graph::new(1, []).unwrap();
        assert_eq!(normalized_graph_laplacian(&single).values, arr2(&[[1.0]]));
        let edge = Graph::new(2, [(0, 1)]).unwrap();
        let l = normalized_graph_laplacian(&edge).values;
        for x in l.iter() {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn schur_simple_verdicts() {
        let i2 = Array2::<f64>::eye(2);
        let zero = Array2::<f64>::zeros((2, 2));
        let r = check_psd_schur(&i2.view(), &zero.view(), &i2.view(), 1e-9).unwrap();
        assert!(r.schur_verdict && r.direct_verdict);
        let two = &i2 * 2.0;
        let r = check_psd_schur(&i2.view(), &two.view(), &i2.view(), 1e-9).unwrap();
        assert!(!r.schur_verdict && !r.direct_verdict);
        assert!((r.min_eigenvalue + 1.0).abs() < 1e-10);
    }

    #[test]
    fn schur_range_condition_fails_for_singular_lb() {
        // L_b = 0 and F ≠ 0: never PSD, and the range condition catches it.
        let la = Array2::<f64>::eye(1) * 10.0;
        let f = arr2(&[[0.1]]);
        let lb = Array2::<f64>::zeros((1, 1));
        let r = check_psd_schur(&la.view(), &f.view(), &lb.view(), 1e-9).unwrap();
        assert!(!r.range_condition);
        assert!(!r.direct_verdict);
        assert!(r.agree());
    }

    #[test]
    fn text_format_roundtrip_and_errors() {
        let a = arr2(&[[1.5, -2.0], [0.0, 3.25e-7]]);
        assert_eq!(matrix_from_text(&matrix_to_text(&a.view())).unwrap(), a);
        assert!(matrix_from_text("").is_err());
        assert!(matrix_from_text("2 2\n1 2\n").is_err());
        assert!(matrix_from_text("1 2\n1 2 3\n").is_err());
        assert!(matrix_from_text("1 1\n1\n2\n").is_err());
        assert!(matrix_from_text("18446744073709551615 2\n").is_err());
    }
}
