//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks the records in exact reverse order and accumulates gradients into
//! every node that depends on a `requires_grad` leaf. Tensors are cheap
//! `Copy` handles into the tape that created them.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Csr;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Square(usize),
    Relu(usize),
    RowSoftmax(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Transpose(usize),
    Scale(usize, f64),
    Shift(usize),
    Dropout(usize, Array2<f64>),
    Sum(usize),
    Mean(usize),
    FermiDirac {
        input: usize,
        eta: f64,
    },
    BceWithLogistic {
        input: usize,
        labels: Vec<f64>,
    },
    GatherRows(usize, Vec<usize>),
    AddRowBias(usize, usize),
    SpMm(Arc<Csr>, usize),
    BlockReluSoftmax {
        off: usize,
        d1: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Array2<f64>>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Operation recorder. Single-owner; build a fresh tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: Tensor, b: Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn softmax_rows_inplace(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.mapv_inplace(|v| v / total);
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `[1 + exp((x − δ)/η)]⁻¹`
pub fn fermi_dirac_value(x: f64, delta: f64, eta: f64) -> f64 {
    logistic((delta - x) / eta)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Tensor {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Array2<f64>>, op: Op, requires_grad: bool) -> Tensor {
        let (rows, cols) = value.dim();
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Tensor { id, rows, cols }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf, false)
    }

    /// A constant leaf sharing storage with the caller.
    pub fn constant_shared(&mut self, value: Arc<Array2<f64>>) -> Tensor {
        self.push_shared(value, Op::Leaf, false)
    }

    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        &self.nodes[t.id].value
    }

    /// Scalar value of a 1×1 tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value[[0, 0]]
    }

    /// Gradient after [`Tape::backward`]; `None` for nodes that do not
    /// depend on any trainable leaf.
    pub fn grad(&self, t: Tensor) -> Option<&Array2<f64>> {
        self.nodes[t.id].grad.as_ref()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(shape_err("matmul", a, b));
        }
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(v, Op::MatMul(a.id, b.id), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.cols {
            return Err(shape_err("matmul_nt", a, b));
        }
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(v, Op::MatMulNt(a.id, b.id), rg))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("add", a, b));
        }
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(v, Op::Add(a.id, b.id), rg))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("sub", a, b));
        }
        let v = self.value(a) - self.value(b);
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(v, Op::Sub(a.id, b.id), rg))
    }

    pub fn square(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(|x| x * x);
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Square(a.id), rg)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Relu(a.id), rg)
    }

    pub fn row_softmax(&mut self, a: Tensor) -> Tensor {
        let mut v = self.value(a).clone();
        softmax_rows_inplace(&mut v);
        let rg = self.rg(&[a.id]);
        self.push(v, Op::RowSoftmax(a.id), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        if let Some(bad) = parts.iter().find(|t| t.rows != first.rows) {
            return Err(shape_err("concat_cols", first, *bad));
        }
        let views: Vec<_> = parts.iter().map(|t| self.value(*t).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        let ids: Vec<usize> = parts.iter().map(|t| t.id).collect();
        let rg = self.rg(&ids);
        Ok(self.push(v, Op::ConcatCols(ids), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        if let Some(bad) = parts.iter().find(|t| t.cols != first.cols) {
            return Err(shape_err("concat_rows", first, *bad));
        }
        let views: Vec<_> = parts.iter().map(|t| self.value(*t).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("cols checked");
        let ids: Vec<usize> = parts.iter().map(|t| t.id).collect();
        let rg = self.rg(&ids);
        Ok(self.push(v, Op::ConcatRows(ids), rg))
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Transpose(a.id), rg)
    }

    pub fn scale(&mut self, a: Tensor, factor: f64) -> Tensor {
        let v = self.value(a) * factor;
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Scale(a.id, factor), rg)
    }

    /// Adds a scalar to every entry.
    pub fn shift(&mut self, a: Tensor, offset: f64) -> Tensor {
        let v = self.value(a) + offset;
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Shift(a.id), rg)
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1/(1−p)`. `p = 0` returns the input unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Tensor, p: f64, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Array2::from_shape_fn(a.shape(), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let v = self.value(a) * &mask;
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::Dropout(a.id, mask), rg))
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Sum(a.id), rg)
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let n = (a.rows * a.cols).max(1) as f64;
        let v = Array2::from_elem((1, 1), self.value(a).sum() / n);
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Mean(a.id), rg)
    }

    /// Elementwise Fermi–Dirac probability `1/(exp((x − δ)/η) + 1)`.
    pub fn fermi_dirac(&mut self, a: Tensor, delta: f64, eta: f64) -> Result<Tensor> {
        if eta.is_nan() || eta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature η must be positive, got {eta}"
            )));
        }
        let v = self.value(a).mapv(|x| fermi_dirac_value(x, delta, eta));
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::FermiDirac { input: a.id, eta }, rg))
    }

    /// Mean binary cross-entropy of `logistic(z)` against 0/1 labels,
    /// evaluated in the overflow-free softplus form.
    pub fn bce_with_logistic(&mut self, logits: Tensor, labels: &[f64]) -> Result<Tensor> {
        if logits.cols != 1 || logits.rows != labels.len() {
            return Err(Error::Shape {
                op: "bce_with_logistic",
                left: logits.shape(),
                right: (labels.len(), 1),
            });
        }
        let z = self.value(logits);
        let total: f64 = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let v = Array2::from_elem((1, 1), total / labels.len().max(1) as f64);
        let rg = self.rg(&[logits.id]);
        Ok(self.push(
            v,
            Op::BceWithLogistic {
                input: logits.id,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    pub fn gather_rows(&mut self, a: Tensor, rows: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= a.rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: a.shape(),
                right: (bad, 0),
            });
        }
        let v = self.value(a).select(Axis(0), rows);
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::GatherRows(a.id, rows.to_vec()), rg))
    }

    /// `a + 1·bias` with `bias` a 1 × cols row.
    pub fn add_row_bias(&mut self, a: Tensor, bias: Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(shape_err("add_row_bias", a, bias));
        }
        let v = self.value(a) + self.value(bias);
        let rg = self.rg(&[a.id, bias.id]);
        Ok(self.push(v, Op::AddRowBias(a.id, bias.id), rg))
    }

    /// Constant sparse matrix times tensor.
    pub fn spmm(&mut self, sparse: Arc<Csr>, a: Tensor) -> Result<Tensor> {
        if sparse.cols != a.rows {
            return Err(Error::Shape {
                op: "spmm",
                left: (sparse.rows, sparse.cols),
                right: a.shape(),
            });
        }
        let v = sparse.matmul_dense(&self.value(a).view());
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::SpMm(sparse, a.id), rg))
    }

    /// Fused `row_softmax(relu([[A, F], [Fᵀ, B]]))` for constant diagonal
    /// blocks `A` (d1×d1), `B` (d2×d2) and a differentiable off-diagonal
    /// block `F` (d1×d2). Equivalent to composing `concat_*`, `transpose`,
    /// `relu` and `row_softmax`, without materialising the intermediates.
    pub fn block_relu_softmax(&mut self, a: &Array2<f64>, off: Tensor, b: &Array2<f64>) -> Result<Tensor> {
        let (d1, d2) = (a.nrows(), b.nrows());
        if a.ncols() != d1 || b.ncols() != d2 || off.shape() != (d1, d2) {
            return Err(Error::Shape {
                op: "block_relu_softmax",
                left: (d1, d2),
                right: off.shape(),
            });
        }
        let dim = d1 + d2;
        let f = self.value(off);
        let mut out = Array2::zeros((dim, dim));
        out.slice_mut(s![..d1, ..d1]).assign(a);
        out.slice_mut(s![..d1, d1..]).assign(f);
        out.slice_mut(s![d1.., ..d1]).assign(&f.t());
        out.slice_mut(s![d1.., d1..]).assign(b);
        out.mapv_inplace(|x| x.max(0.0));
        softmax_rows_inplace(&mut out);
        let rg = self.rg(&[off.id]);
        Ok(self.push(out, Op::BlockReluSoftmax { off: off.id, d1 }, rg))
    }

    /// Populates gradients of `loss` (a 1×1 tensor) with respect to every
    /// node that depends on a trainable leaf. Gradients from a previous
    /// pass are cleared first.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.id].requires_grad {
            return Ok(());
        }
        self.nodes[loss.id].grad = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(id, &g);
            self.nodes[id].grad = Some(g);
            for (parent, delta) in contributions {
                let node = &mut self.nodes[parent];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => *acc += &delta,
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, g: &Array2<f64>) -> Vec<(usize, Array2<f64>)> {
        let node = &self.nodes[id];
        let val = |i: usize| -> &Array2<f64> { &self.nodes[i].value };
        let needs = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    out.push((*a, g.dot(&val(*b).t())));
                }
                if needs(*b) {
                    out.push((*b, val(*a).t().dot(g)));
                }
                out
            }
            Op::MatMulNt(a, b) => {
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    out.push((*a, g.dot(val(*b))));
                }
                if needs(*b) {
                    out.push((*b, g.t().dot(val(*a))));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::Square(a) => vec![(*a, g * val(*a) * 2.0)],
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                vec![(*a, d)]
            }
            Op::RowSoftmax(a) => vec![(*a, softmax_backward(&node.value, g))],
            Op::ConcatCols(ids) => {
                let mut at = 0;
                ids.iter()
                    .map(|&i| {
                        let w = val(i).ncols();
                        let piece = g.slice(s![.., at..at + w]).to_owned();
                        at += w;
                        (i, piece)
                    })
                    .collect()
            }
            Op::ConcatRows(ids) => {
                let mut at = 0;
                ids.iter()
                    .map(|&i| {
                        let h = val(i).nrows();
                        let piece = g.slice(s![at..at + h, ..]).to_owned();
                        at += h;
                        (i, piece)
                    })
                    .collect()
            }
            Op::Transpose(a) => vec![(*a, g.t().to_owned())],
            Op::Scale(a, f) => vec![(*a, g * *f)],
            Op::Shift(a) => vec![(*a, g.clone())],
            Op::Dropout(a, mask) => vec![(*a, g * mask)],
            Op::Sum(a) => vec![(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]]))],
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                vec![(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]] / n))]
            }
            Op::FermiDirac { input, eta } => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*node.value).for_each(|d, &p| {
                    *d *= -p * (1.0 - p) / eta;
                });
                vec![(*input, d)]
            }
            Op::BceWithLogistic { input, labels } => {
                let n = labels.len().max(1) as f64;
                let scale = g[[0, 0]] / n;
                let z = val(*input);
                let d = Array2::from_shape_fn(z.dim(), |(i, _)| (logistic(z[[i, 0]]) - labels[i]) * scale);
                vec![(*input, d)]
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                vec![(*a, d)]
            }
            Op::AddRowBias(a, bias) => {
                let mut out = vec![(*a, g.clone())];
                if needs(*bias) {
                    out.push((*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                }
                out
            }
            Op::SpMm(sparse, a) => vec![(*a, sparse.t_matmul_dense(&g.view()))],
            Op::BlockReluSoftmax { off, d1 } => {
                let d1 = *d1;
                let pre = softmax_backward(&node.value, g);
                let f = val(*off);
                let mut d = pre.slice(s![..d1, d1..]).to_owned();
                d += &pre.slice(s![d1.., ..d1]).t();
                Zip::from(&mut d).and(f).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                vec![(*off, d)]
            }
        }
    }
}

/// Vector–Jacobian product of a row softmax: `s ⊙ (g − ⟨g, s⟩)` per row.
fn softmax_backward(s: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(s.dim());
    Zip::from(out.rows_mut())
        .and(s.rows())
        .and(g.rows())
        .for_each(|mut o, s, g| {
            let dot: f64 = s.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            Zip::from(&mut o)
                .and(&s)
                .and(&g)
                .for_each(|o, &s, &g| *o = s * (g - dot));
        });
    out
}
