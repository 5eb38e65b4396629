//! Edge splits, negative sampling, Adam with early stopping, ROC AUC,
//! significance testing and multi-seed experiment orchestration.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{canonical, Graph};
use crate::model::{Embeddings, Model, ModelConfig, ModelParameters, Variant};

/// SplitMix64 finaliser over `(master, stream, index)`; gives independent
/// seeds for runs, epochs and trials from one master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SPLIT: u64 = 1;
const STREAM_RUN: u64 = 2;
const STREAM_NEG: u64 = 3;
const STREAM_DROPOUT: u64 = 4;
const STREAM_INIT: u64 = 5;

/// Disjoint train/validation/test positives plus fixed validation and test
/// negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub seed: u64,
}

impl EdgeSplit {
    /// Same nodes as `graph`, training edges only.
    pub fn train_graph(&self, graph: &Graph) -> Result<Graph> {
        graph.with_edges(self.train_pos.iter().copied())
    }

    /// Pairs that training negatives must avoid besides true edges.
    pub fn held_out_negatives(&self) -> HashSet<(usize, usize)> {
        self.val_neg.iter().chain(&self.test_neg).copied().collect()
    }
}

/// 85/5/10 split; validation and test sizes are floored so training keeps
/// the rounding remainder.
pub fn split_edges(graph: &Graph, seed: u64) -> Result<EdgeSplit> {
    let m = graph.m();
    if m < 20 {
        return Err(Error::InvalidGraph(format!("need at least 20 edges to split, got {m}")));
    }
    let n_val = m * 5 / 100;
    let n_test = m * 10 / 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = rand::seq::index::sample(&mut rng, m, m).into_vec();
    let pick = |range: std::ops::Range<usize>| -> Vec<(usize, usize)> {
        let mut v: Vec<_> = order[range].iter().map(|&i| graph.edges()[i]).collect();
        v.sort_unstable();
        v
    };
    let val_pos = pick(0..n_val);
    let test_pos = pick(n_val..n_val + n_test);
    let train_pos = pick(n_val + n_test..m);

    let negatives = sample_negatives(graph, n_val + n_test, &HashSet::new(), rng.random())?;
    let (val_neg, test_neg) = negatives.split_at(n_val);
    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        val_neg: val_neg.to_vec(),
        test_neg: test_neg.to_vec(),
        seed,
    })
}

/// `count` distinct non-edges of `graph`, uniform over the complement minus
/// `exclude`. Order is the sampling order.
pub fn sample_negatives(
    graph: &Graph,
    count: usize,
    exclude: &HashSet<(usize, usize)>,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let n = graph.n();
    let exclude: HashSet<(usize, usize)> = exclude
        .iter()
        .filter(|&&(u, v)| u != v && u < n && v < n && !graph.has_edge(u, v))
        .map(|&(u, v)| canonical(u, v))
        .collect();
    let available = graph.non_edge_count() - exclude.len();
    if count > available {
        return Err(Error::InsufficientNonEdges {
            requested: count,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocked = |p: (usize, usize)| graph.has_edge(p.0, p.1) || exclude.contains(&p);

    if count * 2 <= available {
        // Rejection sampling: expected draws per accept is below 2 relative
        // to the free pairs, so this stays cheap on sparse graphs.
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v {
                continue;
            }
            let p = canonical(u, v);
            if blocked(p) || !seen.insert(p) {
                continue;
            }
            out.push(p);
        }
        Ok(out)
    } else {
        let mut candidates = Vec::with_capacity(available);
        for u in 0..n {
            for v in u + 1..n {
                if !blocked((u, v)) {
                    candidates.push((u, v));
                }
            }
        }
        let picked = rand::seq::index::sample(&mut rng, candidates.len(), count);
        Ok(picked.into_iter().map(|i| candidates[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub runs: usize,
    pub seed: u64,
    /// Draw a fresh split per run instead of sharing one partition.
    pub resplit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            max_epochs: 5000,
            patience: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            runs: 20,
            seed: 0,
            resplit: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            errs.push("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            errs.push("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) {
            errs.push(format!("beta1 must lie in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            errs.push(format!("beta2 must lie in [0, 1), got {}", self.beta2));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            errs.push(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.runs == 0 {
            errs.push("runs must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Adam with bias correction, one moment pair per named parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &BTreeMap<String, Array2<f64>>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let Some(p) = params.tensors.get_mut(name) else {
                continue;
            };
            let m = self.m.entry(name.clone()).or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Array2::zeros(g.dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub history: History,
}

/// Mean BCE of Fermi–Dirac probabilities, in the stable logistic form.
pub fn evaluation_loss(emb: &Embeddings, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (pairs, y) in [(pos, 1.0), (neg, 0.0)] {
        for &(u, v) in pairs {
            let z = (emb.delta - emb.distance(u, v)?) / emb.eta;
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
    }
    Ok(total / (pos.len() + neg.len()).max(1) as f64)
}

/// Trains from `init` until `max_epochs` or `patience` epochs without a
/// validation-loss improvement, returning the best-validation parameters.
pub fn train(
    model: &Model,
    graph: &Graph,
    split: &EdgeSplit,
    tc: &TrainConfig,
    init: ModelParameters,
    seed: u64,
) -> Result<TrainOutcome> {
    tc.validate()?;
    let exclude = split.held_out_negatives();
    // Dense toy graphs may not have a negative for every positive; use all
    // remaining non-edges then.
    let neg_count = split.train_pos.len().min(graph.non_edge_count() - exclude.len());
    let mut params = init;
    let mut adam = Adam::new(tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps);
    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best = params.clone();
    let mut since_best = 0;

    // Each iteration scores the current parameters on validation and then
    // takes one step, so `val_loss[k]` and `train_loss[k]` describe the same
    // parameters.
    for epoch in 0..tc.max_epochs {
        let negatives = sample_negatives(graph, neg_count, &exclude, derive_seed(seed, STREAM_NEG, epoch as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT, epoch as u64));
        let mut tape = Tape::new();
        let (fp, emb) = model.forward_with_eval(&mut tape, &params, &mut rng)?;
        let loss = model.loss(&mut tape, &fp, &split.train_pos, &negatives)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, loss: value });
        }
        let val = evaluation_loss(&emb, &split.val_pos, &split.val_neg)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, loss: val });
        }
        history.train_loss.push(value);
        history.val_loss.push(val);
        if val < history.best_val_loss {
            history.best_val_loss = val;
            history.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                history.stopped_early = true;
                break;
            }
        }

        tape.backward(loss)?;
        let grads = fp
            .params
            .iter()
            .map(|(name, &t)| {
                let g = tape.grad(t).cloned().unwrap_or_else(|| Array2::zeros(t.shape()));
                (name.clone(), g)
            })
            .collect();
        drop(tape);
        adam.step(&mut params, &grads);
    }
    Ok(TrainOutcome { params: best, history })
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half. Computed exactly in integer arithmetic after a sort.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    if pos.iter().chain(neg).any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("AUC scores contain NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += p * (2 * neg_below + q);
        neg_below += q;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * regularized_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's one-sided test of `mean(a) > mean(b)`; returns the p-value.
pub fn t_test_one_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("each sample needs at least two values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(match ma.partial_cmp(&mb) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    Ok(student_t_sf(t, df))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if xs.len() == 1 {
        return (xs[0], 0.0);
    }
    let (m, v) = mean_var(xs);
    (m, v.sqrt())
}

/// Test AUC of trained parameters.
pub fn test_auc(model: &Model, params: &ModelParameters, split: &EdgeSplit) -> Result<f64> {
    let emb = model.embed(params)?;
    roc_auc(&emb.score_pairs(&split.test_pos)?, &emb.score_pairs(&split.test_neg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub auc: f64,
    pub val_auc: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub mean_auc: f64,
    pub std_auc: f64,
    pub per_run: Vec<RunRecord>,
    /// One-sided p-value that the full model beats this variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value_full_greater: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub runs: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub per_run: Vec<RunRecord>,
    pub ablation: BTreeMap<String, VariantSummary>,
    pub config: ReportConfig,
}

/// Trains and evaluates one seed of one variant.
pub fn run_once(
    graph: &Graph,
    split: &EdgeSplit,
    mc: &ModelConfig,
    tc: &TrainConfig,
    run: usize,
    seed: u64,
) -> Result<(RunRecord, Model, TrainOutcome)> {
    let features = graph
        .features()
        .ok_or_else(|| Error::InvalidArgument("graph has no node features".into()))?
        .clone();
    let model = Model::build(&split.train_graph(graph)?, features, mc.clone(), seed)?;
    let init = model.init_parameters(derive_seed(seed, STREAM_INIT, 0));
    let outcome = train(&model, graph, split, tc, init, seed)?;
    let emb = model.embed(&outcome.params)?;
    let auc = roc_auc(&emb.score_pairs(&split.test_pos)?, &emb.score_pairs(&split.test_neg)?)?;
    let val_auc = roc_auc(&emb.score_pairs(&split.val_pos)?, &emb.score_pairs(&split.val_neg)?)?;
    let record = RunRecord {
        run,
        seed,
        auc,
        val_auc,
        best_epoch: outcome.history.best_epoch,
        epochs: outcome.history.train_loss.len(),
        best_val_loss: outcome.history.best_val_loss,
    };
    Ok((record, model, outcome))
}

/// Split for run `run`: shared unless `resplit` is set.
pub fn split_for_run(graph: &Graph, tc: &TrainConfig, run: usize) -> Result<EdgeSplit> {
    let seed = if tc.resplit {
        derive_seed(tc.seed, STREAM_SPLIT, run as u64)
    } else {
        derive_seed(tc.seed, STREAM_SPLIT, 0)
    };
    split_edges(graph, seed)
}

pub fn run_seed(tc: &TrainConfig, run: usize) -> u64 {
    derive_seed(tc.seed, STREAM_RUN, run as u64)
}

fn summarize(records: Vec<RunRecord>) -> VariantSummary {
    let aucs: Vec<f64> = records.iter().map(|r| r.auc).collect();
    let (mean_auc, std_auc) = mean_std(&aucs);
    VariantSummary {
        mean_auc,
        std_auc,
        per_run: records,
        p_value_full_greater: None,
    }
}

/// Runs `tc.runs` seeds of the configured model and of every requested
/// ablation variant. Runs execute in parallel; results are ordered by run.
pub fn run_experiment(
    dataset: &str,
    graph: &Graph,
    mc: &ModelConfig,
    tc: &TrainConfig,
    variants: &[Variant],
) -> Result<ExperimentReport> {
    run_experiment_with_params(dataset, graph, mc, tc, variants).map(|r| r.0)
}

/// [`run_experiment`], also returning the trained parameters of run 0 of
/// the configured variant.
pub fn run_experiment_with_params(
    dataset: &str,
    graph: &Graph,
    mc: &ModelConfig,
    tc: &TrainConfig,
    variants: &[Variant],
) -> Result<(ExperimentReport, ModelParameters)> {
    mc.validate()?;
    tc.validate()?;
    let splits = if tc.resplit {
        (0..tc.runs)
            .map(|r| split_for_run(graph, tc, r))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![split_for_run(graph, tc, 0)?; 1]
    };
    let split_of = |run: usize| if tc.resplit { &splits[run] } else { &splits[0] };

    // The configured variant is the main run set; it is not trained twice
    // when it also appears among the requested ablations.
    let mut jobs: Vec<(Variant, usize)> = (0..tc.runs).map(|r| (mc.variant, r)).collect();
    for &v in variants.iter().filter(|&&v| v != mc.variant) {
        jobs.extend((0..tc.runs).map(|r| (v, r)));
    }
    let results: Vec<Result<(RunRecord, Option<ModelParameters>)>> = jobs
        .par_iter()
        .map(|&(variant, run)| {
            let cfg = ModelConfig { variant, ..mc.clone() };
            let (record, _, outcome) = run_once(graph, split_of(run), &cfg, tc, run, run_seed(tc, run))?;
            let keep = variant == mc.variant && run == 0;
            Ok((record, keep.then_some(outcome.params)))
        })
        .collect();

    let mut by_variant: BTreeMap<Variant, Vec<RunRecord>> = BTreeMap::new();
    let mut first = None;
    for (&(variant, _), res) in jobs.iter().zip(results) {
        let (record, params) = res?;
        first = first.or(params);
        by_variant.entry(variant).or_default().push(record);
    }
    let main_summary = summarize(by_variant.remove(&mc.variant).unwrap_or_default());
    let main_aucs: Vec<f64> = main_summary.per_run.iter().map(|r| r.auc).collect();
    let mut ablation = BTreeMap::new();
    if variants.contains(&mc.variant) {
        ablation.insert(mc.variant.name().to_string(), main_summary.clone());
    }
    for (v, records) in by_variant {
        let mut summary = summarize(records);
        if main_aucs.len() >= 2 {
            let other: Vec<f64> = summary.per_run.iter().map(|r| r.auc).collect();
            summary.p_value_full_greater = Some(t_test_one_sided(&main_aucs, &other)?);
        }
        ablation.insert(v.name().to_string(), summary);
    }
    let report = ExperimentReport {
        dataset: dataset.to_string(),
        runs: tc.runs,
        mean_auc: main_summary.mean_auc,
        std_auc: main_summary.std_auc,
        per_run: main_summary.per_run,
        ablation,
        config: ReportConfig {
            model: mc.clone(),
            train: tc.clone(),
        },
    };
    Ok((report, first.expect("runs >= 1 was validated")))
}

/// Value lists for a grid search; empty lists keep the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nhid1: Vec<usize>,
    pub nhid2: Vec<usize>,
    pub nhid3: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub r: Vec<u32>,
    pub pi_alpha: Vec<f64>,
    pub pi_beta: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nhid1: vec![1, 8, 16, 32, 64, 128],
            nhid2: vec![64, 128, 1024],
            nhid3: vec![4, 16, 32],
            learning_rate: vec![0.001, 0.005, 0.008, 0.01, 0.05],
            dropout: (1..=9).map(|i| i as f64 / 10.0).collect(),
            r: vec![2, 3, 4, 5],
            pi_alpha: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            pi_beta: vec![1.0, 10.0],
        }
    }
}

impl GridSpec {
    /// Every cell of the cartesian product, in lexicographic order of the
    /// lists as declared.
    pub fn cells(&self, mc: &ModelConfig, tc: &TrainConfig) -> Vec<(ModelConfig, TrainConfig)> {
        fn or<T: Clone>(list: &[T], base: T) -> Vec<T> {
            if list.is_empty() {
                vec![base]
            } else {
                list.to_vec()
            }
        }
        let mut out = Vec::new();
        for &nhid1 in &or(&self.nhid1, mc.nhid1) {
            for &nhid2 in &or(&self.nhid2, mc.nhid2) {
                for &nhid3 in &or(&self.nhid3, mc.nhid3) {
                    for &lr in &or(&self.learning_rate, tc.learning_rate) {
                        for &dropout in &or(&self.dropout, mc.dropout) {
                            for &r in &or(&self.r, mc.r) {
                                for &pi_alpha in &or(&self.pi_alpha, mc.pi_alpha) {
                                    for &pi_beta in &or(&self.pi_beta, mc.pi_beta) {
                                        let m = ModelConfig {
                                            nhid1,
                                            nhid2,
                                            nhid3,
                                            dropout,
                                            r,
                                            pi_alpha,
                                            pi_beta,
                                            ..mc.clone()
                                        };
                                        let t = TrainConfig {
                                            learning_rate: lr,
                                            ..tc.clone()
                                        };
                                        out.push((m, t));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub dataset: String,
    pub cells: Vec<GridCell>,
    pub best: usize,
}

/// Trains one seed per cell on a shared split and picks the lowest
/// validation loss.
pub fn grid_search(
    dataset: &str,
    graph: &Graph,
    cells: &[(ModelConfig, TrainConfig)],
    tc: &TrainConfig,
) -> Result<GridReport> {
    if cells.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let split = split_for_run(graph, tc, 0)?;
    let seed = run_seed(tc, 0);
    let results: Vec<Result<GridCell>> = cells
        .par_iter()
        .map(|(m, t)| {
            m.validate()?;
            let (rec, _, _) = run_once(graph, &split, m, t, 0, seed)?;
            Ok(GridCell {
                model: m.clone(),
                learning_rate: t.learning_rate,
                val_loss: rec.best_val_loss,
                val_auc: rec.val_auc,
            })
        })
        .collect();
    let cells: Vec<GridCell> = results.into_iter().collect::<Result<_>>()?;
    let best = cells
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok(GridReport {
        dataset: dataset.to_string(),
        cells,
        best,
    })
}
