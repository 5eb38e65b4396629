//! Dense symmetric eigensolvers and a small CSR type.
//!
//! Two independent eigensolvers are provided: cyclic Jacobi rotations for
//! small matrices and Householder tridiagonalisation followed by implicit
//! QL for everything else. [`symmetric_eigen`] dispatches on size.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Matrices at or below this size use Jacobi rotations.
pub const JACOBI_MAX_DIM: usize = 64;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending. Column `j` of
/// `vectors` belongs to `values[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

impl SymmetricEigen {
    /// Largest `‖A v − λ v‖₂` over all eigenpairs.
    pub fn max_residual(&self, a: &ArrayView2<f64>) -> f64 {
        let av = a.dot(&self.vectors);
        let mut worst = 0.0f64;
        for (j, &lambda) in self.values.iter().enumerate() {
            let r = av
                .column(j)
                .iter()
                .zip(self.vectors.column(j).iter())
                .map(|(x, v)| (x - lambda * v).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r);
        }
        worst
    }

    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

fn check_square(a: &ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Dimension(format!("expected square matrix, got {r}×{c}")));
    }
    Ok(r)
}

fn sort_ascending(values: Vec<f64>, vectors: Array2<f64>) -> SymmetricEigen {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps the original index order for ties.
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted_vals = order.iter().map(|&i| values[i]).collect();
    let mut sorted_vecs = Array2::zeros(vectors.dim());
    for (dst, &src) in order.iter().enumerate() {
        sorted_vecs.column_mut(dst).assign(&vectors.column(src));
    }
    SymmetricEigen {
        values: sorted_vals,
        vectors: sorted_vecs,
    }
}

/// Eigendecomposition of a symmetric matrix; only the lower triangle is
/// trusted when the input is slightly asymmetric.
pub fn symmetric_eigen(a: &ArrayView2<f64>) -> Result<SymmetricEigen> {
    let n = check_square(a)?;
    if n <= JACOBI_MAX_DIM {
        jacobi_eigen(a)
    } else {
        tridiagonal_ql_eigen(a)
    }
}

/// Cyclic Jacobi with threshold; stops once the off-diagonal Frobenius
/// norm drops below `1e-10 · ‖A‖_F` (or hits exact-zero rotations).
pub fn jacobi_eigen(a: &ArrayView2<f64>) -> Result<SymmetricEigen> {
    let n = check_square(a)?;
    let mut m = a.to_owned();
    // symmetrise from the lower triangle
    for i in 0..n {
        for j in 0..i {
            m[[j, i]] = m[[i, j]];
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-10 * total.max(f64::MIN_POSITIVE);
    let max_sweeps = 100 * n.max(1);

    let off_norm = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]] * m[[i, j]];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        if off_norm(&m) <= tol {
            break;
        }
        if sweeps >= max_sweeps {
            let eig = sort_ascending((0..n).map(|i| m[[i, i]]).collect(), v);
            return Err(Error::NoConvergence {
                sweeps,
                residual: eig.max_residual(a),
            });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                if s == 0.0 {
                    continue;
                }
                rotated = true;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    Ok(sort_ascending((0..n).map(|i| m[[i, i]]).collect(), v))
}

/// Householder reduction to tridiagonal form followed by the implicit QL
/// algorithm with Wilkinson-style shifts (EISPACK `tred2` / `tql2`).
pub fn tridiagonal_ql_eigen(a: &ArrayView2<f64>) -> Result<SymmetricEigen> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(SymmetricEigen {
            values: vec![],
            vectors: Array2::zeros((0, 0)),
        });
    }
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if j <= i { a[[i, j]] } else { a[[j, i]] }).collect())
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e, 100 * n).map_err(|sweeps| {
        let vectors = Array2::from_shape_fn((n, n), |(i, j)| v[i][j]);
        let eig = SymmetricEigen {
            values: d.clone(),
            vectors,
        };
        Error::NoConvergence {
            sweeps,
            residual: eig.max_residual(a),
        }
    })?;
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| v[i][j]);
    Ok(sort_ascending(d, vectors))
}

#[allow(clippy::needless_range_loop)]
fn tred2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in (j + 1)..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

fn tql2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64], max_iter: usize) -> std::result::Result<(), usize> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(iter);
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
/// magnitude below `rtol · max|λ|` are treated as zero.
pub fn pinv_symmetric(a: &ArrayView2<f64>, rtol: f64) -> Result<Array2<f64>> {
    let eig = symmetric_eigen(a)?;
    let scale = eig.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cutoff = rtol * scale.max(f64::MIN_POSITIVE);
    let n = eig.values.len();
    let inv: Array1<f64> = eig
        .values
        .iter()
        .map(|&l| if l.abs() > cutoff { 1.0 / l } else { 0.0 })
        .collect();
    let mut scaled = eig.vectors.clone();
    for j in 0..n {
        scaled.column_mut(j).mapv_inplace(|x| x * inv[j]);
    }
    Ok(scaled.dot(&eig.vectors.t()))
}

/// Compressed sparse row matrix used for constant operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn from_dense(a: &ArrayView2<f64>) -> Csr {
        let (rows, cols) = a.dim();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in a.rows() {
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    indices.push(j);
                    values.push(x);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                a[[i, self.indices[k]]] += self.values[k];
            }
        }
        a
    }

    /// `self · b`
    pub fn matmul_dense(&self, b: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, b.nrows(), "csr matmul inner dimension");
        let mut out = Array2::zeros((self.rows, b.ncols()));
        for i in 0..self.rows {
            let mut orow = out.row_mut(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                let w = self.values[k];
                orow.scaled_add(w, &b.row(self.indices[k]));
            }
        }
        out
    }

    /// `selfᵀ · b`
    pub fn t_matmul_dense(&self, b: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, b.nrows(), "csr transpose matmul inner dimension");
        let mut out = Array2::zeros((self.cols, b.ncols()));
        for i in 0..self.rows {
            let brow = b.row(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.row_mut(self.indices[k]).scaled_add(self.values[k], &brow);
            }
        }
        out
    }
}

/// Repeated multiplication `a^r` (r ≥ 1), routed through CSR when the
/// matrix is sparse enough to benefit.
pub fn matrix_power(a: &ArrayView2<f64>, r: u32) -> Array2<f64> {
    assert!(r >= 1, "matrix power needs r >= 1");
    let mut acc = a.to_owned();
    if r == 1 {
        return acc;
    }
    let sparse = Csr::from_dense(a);
    let dense_cost = a.nrows() * a.ncols();
    for _ in 1..r {
        acc = if sparse.nnz() * 4 < dense_cost {
            sparse.matmul_dense(&acc.view())
        } else {
            a.dot(&acc)
        };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.random_range(-1.0..1.0);
                a[[i, j]] = x;
                a[[j, i]] = x;
            }
        }
        a
    }

    #[test]
    fn diagonal_matrix() {
        let a = Array2::from_diag(&ndarray::arr1(&[5.0, 3.0, 1.0]));
        for eig in [
            jacobi_eigen(&a.view()).unwrap(),
            tridiagonal_ql_eigen(&a.view()).unwrap(),
        ] {
            assert_eq!(eig.values, vec![1.0, 3.0, 5.0]);
            assert!(eig.max_residual(&a.view()) < 1e-12);
        }
    }

    #[test]
    fn solvers_agree_on_random_matrices() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (20, 4), (40, 5)] {
            let a = random_symmetric(n, seed);
            let j = jacobi_eigen(&a.view()).unwrap();
            let q = tridiagonal_ql_eigen(&a.view()).unwrap();
            for (x, y) in j.values.iter().zip(&q.values) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
            assert!(j.max_residual(&a.view()) < 1e-9);
            assert!(q.max_residual(&a.view()) < 1e-9);
            let gram = q.vectors.t().dot(&q.vectors);
            let err = (&gram - &Array2::<f64>::eye(n))
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn large_matrix_uses_ql() {
        let a = random_symmetric(90, 9);
        let eig = symmetric_eigen(&a.view()).unwrap();
        assert!(eig.max_residual(&a.view()) < 1e-8);
        let trace: f64 = (0..90).map(|i| a[[i, i]]).sum();
        let sum: f64 = eig.values.iter().sum();
        assert!((trace - sum).abs() < 1e-9);
    }

    #[test]
    fn non_square_rejected() {
        let a = Array2::<f64>::zeros((2, 3));
        assert!(symmetric_eigen(&a.view()).is_err());
    }

    #[test]
    fn pinv_of_singular_projection() {
        let a = ndarray::arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let p = pinv_symmetric(&a.view(), 1e-10).unwrap();
        // pinv of [[1,1],[1,1]] is [[.25,.25],[.25,.25]]
        for x in p.iter() {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn csr_products_match_dense() {
        let a = ndarray::arr2(&[[0.0, 2.0, 0.0], [1.0, 0.0, -1.0]]);
        let b = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let csr = Csr::from_dense(&a.view());
        assert_eq!(csr.nnz(), 3);
        assert_eq!(csr.matmul_dense(&b.view()), a.dot(&b));
        let c = ndarray::arr2(&[[1.0], [2.0]]);
        assert_eq!(csr.t_matmul_dense(&c.view()), a.t().dot(&c));
        assert_eq!(csr.to_dense(), a);
    }

    #[test]
    fn power_matches_repeated_dot() {
        let a = random_symmetric(12, 11);
        let p3 = matrix_power(&a.view(), 3);
        let direct = a.dot(&a).dot(&a);
        assert!((&p3 - &direct).iter().all(|x| x.abs() < 1e-12));
    }
}
