//! The block simplicial complex network.
//!
//! Two branches produce node embeddings. The H-ABC branch mixes feature
//! channels through a row-stochastic block operator assembled from edge
//! Hodge Laplacians (`L1_down`, `L1_up`) and a learned off-diagonal relation.
//! The GCN branch propagates features over the normalized node adjacency.
//! Squared embedding differences of both branches are fused by a one-layer
//! MLP into a distance, and a Fermi–Dirac decoder turns the distance into an
//! edge probability.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{fermi_dirac_value, Tape, Tensor};
use crate::complex::{build_complex, sample_edges};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::hodge::{self, hodge_laplacians, power_operator, projector_top, OperatorKind, OperatorMatrix};
use crate::linalg::Csr;

pub const THETA_XI: &str = "theta_xi";
pub const THETA_PSI: &str = "theta_psi";
pub const THETA_1: &str = "theta_1";
pub const THETA_2: &str = "theta_2";
pub const THETA_3A: &str = "theta_3a";
pub const THETA_3B: &str = "theta_3b";
pub const MLP_W: &str = "mlp_w";
pub const MLP_B: &str = "mlp_b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// `F_ij = ⟨[P(A)]_i, [B]_j⟩`
    InnerProduct,
    /// `F_ij = ⟨Θξ·[P(A)]_i, Θψ·[B]_j⟩`
    Embedded,
}

/// Which form of the block operator the H-ABC layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// Random-walk power forced to 1.
    #[serde(rename = "no_random_walk")]
    NoRandomWalk,
    /// Off-diagonal relation block forced to zero.
    #[serde(rename = "no_relation")]
    NoRelation,
    /// Block operator replaced by `softmax(ReLU(L1))`.
    #[serde(rename = "only_L1")]
    OnlyL1,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoRandomWalk,
        Variant::NoRelation,
        Variant::OnlyL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRandomWalk => "no_random_walk",
            Variant::NoRelation => "no_relation",
            Variant::OnlyL1 => "only_L1",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output width of the H-ABC layer.
    pub nhid1: usize,
    pub nhid2: usize,
    pub nhid3: usize,
    /// Relation embedding width.
    pub d_c: usize,
    /// Random-walk power applied to both Laplacian blocks.
    pub r: u32,
    pub relation: RelationKind,
    pub dropout: f64,
    pub pi_alpha: f64,
    pub pi_beta: f64,
    pub delta: f64,
    pub eta: f64,
    /// Fraction of training edges kept when building the complex.
    pub epsilon: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nhid1: 16,
            nhid2: 128,
            nhid3: 16,
            d_c: 16,
            r: 2,
            relation: RelationKind::Embedded,
            dropout: 0.5,
            pi_alpha: 1.0,
            pi_beta: 1.0,
            delta: 2.0,
            eta: 1.0,
            epsilon: 1.0,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Collects every violated constraint instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (key, v) in [
            ("nhid1", self.nhid1),
            ("nhid2", self.nhid2),
            ("nhid3", self.nhid3),
            ("d_c", self.d_c),
        ] {
            if v == 0 {
                errs.push(format!("{key} must be at least 1"));
            }
        }
        if !(1..=5).contains(&self.r) {
            errs.push(format!("r must lie in 1..=5, got {}", self.r));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            errs.push(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            errs.push(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        for (key, v) in [
            ("pi_alpha", self.pi_alpha),
            ("pi_beta", self.pi_beta),
            ("delta", self.delta),
        ] {
            if !v.is_finite() {
                errs.push(format!("{key} must be finite"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// The power actually applied, after the ablation override.
    pub fn effective_power(&self) -> u32 {
        if self.variant == Variant::NoRandomWalk {
            1
        } else {
            self.r
        }
    }

    fn uses_relation_params(&self) -> bool {
        self.relation == RelationKind::Embedded && matches!(self.variant, Variant::Full | Variant::NoRandomWalk)
    }
}

/// Constant pieces of the adaptive block operator: the powered diagonal
/// blocks and the projected rows of the first block.
#[derive(Debug, Clone)]
pub struct AhlbOperator {
    pub la_r: Arc<Array2<f64>>,
    pub lb_r: Arc<Array2<f64>>,
    /// Rows of `La^r` mapped onto the top-`d2` eigenspace of `La` (d1 × d2).
    pub la_proj: Arc<Array2<f64>>,
}

impl AhlbOperator {
    pub fn new(la: &OperatorMatrix, lb: &OperatorMatrix, r: u32) -> Result<Self> {
        let (d1, d2) = (la.dim(), lb.dim());
        if d2 == 0 || d2 > d1 {
            return Err(Error::Dimension(format!(
                "second block ({d2}) must be non-empty and no larger than the first ({d1})"
            )));
        }
        let la_r = Arc::new(power_operator(la, r)?.power.values);
        let lb_r = Arc::new(power_operator(lb, r)?.power.values);
        let la_proj = if d1 == d2 {
            Arc::clone(&la_r)
        } else {
            Arc::new(projector_top(la, d2)?.project_rows(&la_r.view())?)
        };
        Ok(AhlbOperator { la_r, lb_r, la_proj })
    }

    pub fn d1(&self) -> usize {
        self.la_r.nrows()
    }

    pub fn d2(&self) -> usize {
        self.lb_r.nrows()
    }

    pub fn dim(&self) -> usize {
        self.d1() + self.d2()
    }

    /// The un-normalized block `[[La^r, F], [Fᵀ, Lb^r]]`.
    pub fn raw_block(&self, f: &ArrayView2<f64>) -> Array2<f64> {
        let d1 = self.d1();
        let mut out = Array2::zeros((self.dim(), self.dim()));
        out.slice_mut(s![..d1, ..d1]).assign(&*self.la_r);
        out.slice_mut(s![..d1, d1..]).assign(f);
        out.slice_mut(s![d1.., ..d1]).assign(&f.t());
        out.slice_mut(s![d1.., d1..]).assign(&*self.lb_r);
        out
    }
}

/// How the off-diagonal block is formed.
#[derive(Debug, Clone, Copy)]
pub enum Relation {
    InnerProduct,
    Embedded { xi: Tensor, psi: Tensor },
    Zero,
}

/// The off-diagonal block `F` (d1 × d2).
pub fn relation_block(tape: &mut Tape, op: &AhlbOperator, relation: Relation) -> Result<Tensor> {
    match relation {
        Relation::InnerProduct => Ok(tape.constant(op.la_proj.dot(&op.lb_r.t()))),
        Relation::Zero => Ok(tape.constant(Array2::zeros((op.d1(), op.d2())))),
        Relation::Embedded { xi, psi } => {
            let a = tape.constant_shared(Arc::clone(&op.la_proj));
            let b = tape.constant_shared(Arc::clone(&op.lb_r));
            let p = tape.matmul_nt(a, xi)?;
            let q = tape.matmul_nt(b, psi)?;
            tape.matmul_nt(p, q)
        }
    }
}

/// Row-softmax of the ReLU'd block operator, differentiable in the relation
/// parameters.
pub fn assemble_ahlb(tape: &mut Tape, op: &AhlbOperator, relation: Relation) -> Result<Tensor> {
    let f = relation_block(tape, op, relation)?;
    tape.block_relu_softmax(&op.la_r, f, &op.lb_r)
}

/// `softmax_row(ReLU(a))` for a constant matrix.
pub fn relu_row_softmax(a: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.mapv(|x| x.max(0.0));
    for mut row in out.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// H-ABC layer `((X·Θ1)·N)·Θ2`, evaluated as `X·(Θ1·(N·Θ2))` which is the
/// same product at a fraction of the cost when `N` is wide.
pub fn habc_layer(tape: &mut Tape, x: Tensor, block: Tensor, theta1: Tensor, theta2: Tensor) -> Result<Tensor> {
    if x.shape().1 != theta1.shape().0 {
        return Err(Error::Shape {
            op: "habc_layer",
            left: x.shape(),
            right: theta1.shape(),
        });
    }
    if theta1.shape().1 != block.shape().0 {
        return Err(Error::Shape {
            op: "habc_layer",
            left: theta1.shape(),
            right: block.shape(),
        });
    }
    let nt2 = tape.matmul(block, theta2)?;
    let w = tape.matmul(theta1, nt2)?;
    tape.matmul(x, w)
}

/// Two graph convolutions `L̃·ReLU(L̃·X·Θ3a)·Θ3b` with dropout on the input
/// of each layer when `rng` is given.
pub fn gcn_branch(
    tape: &mut Tape,
    x: Tensor,
    adjacency: &Arc<Csr>,
    theta3a: Tensor,
    theta3b: Tensor,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    let x = match rng.as_deref_mut() {
        Some(r) => tape.dropout(x, dropout, r)?,
        None => x,
    };
    let a = tape.matmul(x, theta3a)?;
    let h1 = tape.spmm(Arc::clone(adjacency), a)?;
    let h1 = tape.relu(h1);
    let h1 = match rng {
        Some(r) => tape.dropout(h1, dropout, r)?,
        None => h1,
    };
    let b = tape.matmul(h1, theta3b)?;
    tape.spmm(Arc::clone(adjacency), b)
}

/// Named trainable matrices, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParameters {
    pub tensors: BTreeMap<String, Array2<f64>>,
}

impl ModelParameters {
    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|a| a.iter().all(|x| x.is_finite()))
    }
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// The block operator feeding the H-ABC layer.
#[derive(Debug, Clone)]
pub enum BlockSource {
    Adaptive(AhlbOperator),
    Fixed(Arc<Array2<f64>>),
}

/// Everything constant across training: features, the normalized node
/// adjacency and the block operator, all derived from training edges.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub features: Arc<Array2<f64>>,
    pub adjacency: Arc<Csr>,
    pub block: BlockSource,
    pub n: usize,
}

/// Handles to one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub z: Tensor,
    pub h: Tensor,
    pub params: BTreeMap<String, Tensor>,
}

impl ForwardPass {
    pub fn param(&self, name: &str) -> Result<Tensor> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }
}

impl Model {
    /// Builds the constant operators from `train_graph`. `seed` drives the
    /// optional edge sampling of the complex.
    pub fn build(train_graph: &Graph, features: Array2<f64>, config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        if features.nrows() != train_graph.n() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                train_graph.n()
            )));
        }
        let sampled = sample_edges(train_graph, config.epsilon, seed)?;
        if sampled.m() == 0 {
            return Err(Error::InvalidGraph("no training edges to build a complex from".into()));
        }
        let laplacians = hodge_laplacians(&build_complex(&sampled));
        let block = match config.variant {
            Variant::OnlyL1 => BlockSource::Fixed(Arc::new(relu_row_softmax(&laplacians.l1.values.view()))),
            _ => BlockSource::Adaptive(AhlbOperator::new(
                &laplacians.l1_down(),
                &laplacians.l1_up(),
                config.effective_power(),
            )?),
        };
        Ok(Model {
            n: train_graph.n(),
            adjacency: Arc::new(hodge::normalized_adjacency_csr(train_graph)),
            features: Arc::new(features),
            block,
            config,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Width of the block operator (rows of Θ2).
    pub fn block_dim(&self) -> usize {
        match &self.block {
            BlockSource::Adaptive(op) => op.dim(),
            BlockSource::Fixed(n) => n.nrows(),
        }
    }

    pub fn init_parameters(&self, seed: u64) -> ModelParameters {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.feature_dim();
        let mut p = ModelParameters::default();
        if let (true, BlockSource::Adaptive(op)) = (c.uses_relation_params(), &self.block) {
            p.insert(THETA_XI, glorot_uniform(c.d_c, op.d2(), &mut rng));
            p.insert(THETA_PSI, glorot_uniform(c.d_c, op.d2(), &mut rng));
        }
        p.insert(THETA_1, glorot_uniform(d, self.block_dim(), &mut rng));
        p.insert(THETA_2, glorot_uniform(self.block_dim(), c.nhid1, &mut rng));
        p.insert(THETA_3A, glorot_uniform(d, c.nhid2, &mut rng));
        p.insert(THETA_3B, glorot_uniform(c.nhid2, c.nhid3, &mut rng));
        p.insert(MLP_W, glorot_uniform(c.nhid3 + c.nhid1, 1, &mut rng));
        p.insert(MLP_B, Array2::zeros((1, 1)));
        p
    }

    /// Records the block operator, both branches and their parameters.
    /// With `rng` present, dropout is active (training mode).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        trainable: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass> {
        let mut handles = BTreeMap::new();
        for (name, value) in &params.tensors {
            let t = if trainable {
                tape.param(value.clone())
            } else {
                tape.constant(value.clone())
            };
            handles.insert(name.clone(), t);
        }
        let get = |name: &str| -> Result<Tensor> {
            handles
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };

        let block = match &self.block {
            BlockSource::Fixed(n) => tape.constant_shared(Arc::clone(n)),
            BlockSource::Adaptive(op) => {
                let relation = match (self.config.variant, self.config.relation) {
                    (Variant::NoRelation, _) => Relation::Zero,
                    (_, RelationKind::InnerProduct) => Relation::InnerProduct,
                    (_, RelationKind::Embedded) => Relation::Embedded {
                        xi: get(THETA_XI)?,
                        psi: get(THETA_PSI)?,
                    },
                };
                assemble_ahlb(tape, op, relation)?
            }
        };
        let x = tape.constant_shared(Arc::clone(&self.features));
        let z = habc_layer(tape, x, block, get(THETA_1)?, get(THETA_2)?)?;
        let h = gcn_branch(
            tape,
            x,
            &self.adjacency,
            get(THETA_3A)?,
            get(THETA_3B)?,
            self.config.dropout,
            rng,
        )?;
        Ok(ForwardPass { z, h, params: handles })
    }

    /// Fused MLP distance for each pair (k × 1).
    pub fn edge_distances(&self, tape: &mut Tape, fp: &ForwardPass, pairs: &[(usize, usize)]) -> Result<Tensor> {
        if let Some(&(u, _)) = pairs.iter().find(|(u, v)| u == v) {
            return Err(Error::InvalidArgument(format!("cannot score self-pair ({u}, {u})")));
        }
        let us: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let vs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let sq_diff = |tape: &mut Tape, emb: Tensor| -> Result<Tensor> {
            let a = tape.gather_rows(emb, &us)?;
            let b = tape.gather_rows(emb, &vs)?;
            let d = tape.sub(a, b)?;
            Ok(tape.square(d))
        };
        let dist_gc = sq_diff(tape, fp.h)?;
        let dist_habc = sq_diff(tape, fp.z)?;
        let dist_gc = tape.scale(dist_gc, self.config.pi_alpha);
        let dist_habc = tape.scale(dist_habc, self.config.pi_beta);
        let fused = tape.concat_cols(&[dist_gc, dist_habc])?;
        let out = tape.matmul(fused, fp.param(MLP_W)?)?;
        let out = tape.add_row_bias(out, fp.param(MLP_B)?)?;
        Ok(tape.relu(out))
    }

    /// Logits `(δ − dist)/η`, so that `logistic(logit)` is the Fermi–Dirac
    /// probability.
    pub fn edge_logits(&self, tape: &mut Tape, fp: &ForwardPass, pairs: &[(usize, usize)]) -> Result<Tensor> {
        let dist = self.edge_distances(tape, fp, pairs)?;
        let scaled = tape.scale(dist, -1.0 / self.config.eta);
        Ok(tape.shift(scaled, self.config.delta / self.config.eta))
    }

    /// Mean binary cross-entropy over positives (label 1) and negatives
    /// (label 0).
    pub fn loss(
        &self,
        tape: &mut Tape,
        fp: &ForwardPass,
        positives: &[(usize, usize)],
        negatives: &[(usize, usize)],
    ) -> Result<Tensor> {
        let mut pairs = Vec::with_capacity(positives.len() + negatives.len());
        pairs.extend_from_slice(positives);
        pairs.extend_from_slice(negatives);
        let mut labels = vec![1.0; positives.len()];
        labels.resize(pairs.len(), 0.0);
        let logits = self.edge_logits(tape, fp, &pairs)?;
        tape.bce_with_logistic(logits, &labels)
    }

    /// Evaluation-mode embeddings, detached from any tape.
    pub fn embed(&self, params: &ModelParameters) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let fp = self.forward(&mut tape, params, false, None)?;
        self.embeddings_from(params, tape.value(fp.z).clone(), tape.value(fp.h).clone())
    }

    /// Training forward pass plus the evaluation-mode embeddings of the same
    /// parameters. The H-ABC branch has no dropout, so only the GCN branch is
    /// recomputed.
    pub fn forward_with_eval(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ForwardPass, Embeddings)> {
        let fp = self.forward(tape, params, true, Some(rng))?;
        let x = tape.constant_shared(Arc::clone(&self.features));
        let h_eval = gcn_branch(
            tape,
            x,
            &self.adjacency,
            fp.param(THETA_3A)?,
            fp.param(THETA_3B)?,
            self.config.dropout,
            None,
        )?;
        let emb = self.embeddings_from(params, tape.value(fp.z).clone(), tape.value(h_eval).clone())?;
        Ok((fp, emb))
    }

    fn embeddings_from(&self, params: &ModelParameters, z: Array2<f64>, h: Array2<f64>) -> Result<Embeddings> {
        let w = params.get(MLP_W)?;
        Ok(Embeddings {
            z,
            h,
            mlp_w: w.column(0).to_vec(),
            mlp_b: params.get(MLP_B)?[[0, 0]],
            pi_alpha: self.config.pi_alpha,
            pi_beta: self.config.pi_beta,
            delta: self.config.delta,
            eta: self.config.eta,
        })
    }
}

/// Node embeddings of both branches plus the decoder weights; scoring is
/// read-only and thread-safe.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub z: Array2<f64>,
    pub h: Array2<f64>,
    pub mlp_w: Vec<f64>,
    pub mlp_b: f64,
    pub pi_alpha: f64,
    pub pi_beta: f64,
    pub delta: f64,
    pub eta: f64,
}

impl Embeddings {
    pub fn node_count(&self) -> usize {
        self.z.nrows()
    }

    pub fn distance(&self, u: usize, v: usize) -> Result<f64> {
        Ok(self.raw_distance(u, v)?.max(0.0))
    }

    /// MLP output before the ReLU clamp. Ordering pairs by it agrees with
    /// ordering by `score` and also separates pairs clamped to distance 0.
    pub fn raw_distance(&self, u: usize, v: usize) -> Result<f64> {
        let n = self.node_count();
        if u == v {
            return Err(Error::InvalidArgument(format!("cannot score self-pair ({u}, {u})")));
        }
        if u >= n || v >= n {
            return Err(Error::InvalidArgument(format!(
                "pair ({u}, {v}) out of range for {n} nodes"
            )));
        }
        let nh = self.h.ncols();
        let mut acc = self.mlp_b;
        for k in 0..nh {
            let d = self.h[[u, k]] - self.h[[v, k]];
            acc += self.pi_alpha * d * d * self.mlp_w[k];
        }
        for k in 0..self.z.ncols() {
            let d = self.z[[u, k]] - self.z[[v, k]];
            acc += self.pi_beta * d * d * self.mlp_w[nh + k];
        }
        Ok(acc)
    }

    /// Edge probability in (0, 1).
    pub fn score(&self, u: usize, v: usize) -> Result<f64> {
        Ok(fermi_dirac_value(self.distance(u, v)?, self.delta, self.eta))
    }

    pub fn score_pairs(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        pairs.iter().map(|&(u, v)| self.score(u, v)).collect()
    }
}

/// `L1_down`, `L1_up`, and `L1` of a graph's clique complex, handy for
/// inspecting what the model is built from.
pub fn edge_laplacians(graph: &Graph) -> (OperatorMatrix, OperatorMatrix, OperatorMatrix) {
    let l = hodge_laplacians(&build_complex(graph));
    (l.l1_down(), l.l1_up(), l.l1)
}

/// The normalized block operator as a tagged matrix (for inspection).
pub fn normalized_operator(op: &AhlbOperator, f: &ArrayView2<f64>) -> OperatorMatrix {
    OperatorMatrix {
        kind: OperatorKind::AhlbNormalized,
        values: relu_row_softmax(&op.raw_block(f).view()),
        down: None,
        up: None,
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BSCNETS\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a config and its parameters.
///
/// Layout (little endian): magic `BSCNETS\0`, `u32` version, `u32` config
/// length + config JSON, `u32` tensor count, then per tensor `u16` name
/// length + UTF-8 name, `u64` rows, `u64` cols, `rows·cols` `f64` values in
/// row-major order.
pub fn write_checkpoint(config: &ModelConfig, params: &ModelParameters) -> Vec<u8> {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut out = Vec::with_capacity(32 + json.len() + params.count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for (name, value) in &params.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for x in value.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParameters)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    config.validate()?;
    let count = r.u32()?;
    let mut params = ModelParameters::default();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()?;
        let cols = r.u64()?;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?;
        let raw = r.take(len)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {name} has non-finite values")));
        }
        let value = Array2::from_shape_vec((rows as usize, cols as usize), values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.tensors.insert(name.clone(), value).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((config, params))
}
