//! Discrete-time SEIR contagion on contact networks, edge perturbation,
//! score-based network reconstruction and centrality-targeted mitigation.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::ceil_fraction;
use crate::error::{Error, Result};
use crate::features::{betweenness, centrality_features, degree, standardize_columns};
use crate::graph::{canonical, Graph};
use crate::model::{ModelConfig, Variant};
use crate::training::{derive_seed, run_once, run_seed, sample_negatives, split_for_run, TrainConfig};

const STREAM_TRIAL: u64 = 11;
const STREAM_PERTURB: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeirConfig {
    /// Per infected neighbour, per day, S → E.
    pub beta: f64,
    /// E → I per day.
    pub alpha: f64,
    /// I → R per day.
    pub gamma: f64,
    pub days: usize,
    pub trials: usize,
    /// Fraction of nodes infected on day 0 (at least one node).
    pub initial_fraction: f64,
    /// Explicit day-0 infected nodes; overrides `initial_fraction`.
    pub initial_nodes: Option<Vec<usize>>,
}

impl Default for SeirConfig {
    fn default() -> Self {
        SeirConfig {
            beta: 0.01,
            alpha: 0.1,
            gamma: 0.005,
            days: 180,
            trials: 50,
            initial_fraction: 0.01,
            initial_nodes: None,
        }
    }
}

impl SeirConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (key, v) in [("beta", self.beta), ("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{key} must lie in [0, 1], got {v}"));
            }
        }
        if self.days == 0 {
            errs.push("days must be at least 1".into());
        }
        if self.trials == 0 {
            errs.push("trials must be at least 1".into());
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            errs.push(format!(
                "initial_fraction must lie in (0, 1], got {}",
                self.initial_fraction
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compartment {
    S,
    E,
    I,
    R,
}

/// Per-node compartments, the day counter and the trial's random stream.
#[derive(Debug, Clone)]
pub struct EpidemicState {
    pub compartments: Vec<Compartment>,
    pub day: usize,
    rng: ChaCha8Rng,
}

impl EpidemicState {
    /// Day-0 state with the configured initial infections.
    pub fn new(n: usize, config: &SeirConfig, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("cannot simulate on an empty graph".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut compartments = vec![Compartment::S; n];
        let infected = match &config.initial_nodes {
            Some(nodes) => {
                if let Some(&bad) = nodes.iter().find(|&&u| u >= n) {
                    return Err(Error::InvalidArgument(format!(
                        "initial node {bad} out of range for {n} nodes"
                    )));
                }
                nodes.clone()
            }
            None => {
                let k = ceil_fraction(config.initial_fraction, n).clamp(1, n);
                rand::seq::index::sample(&mut rng, n, k).into_vec()
            }
        };
        for u in infected {
            compartments[u] = Compartment::I;
        }
        Ok(EpidemicState {
            compartments,
            day: 0,
            rng,
        })
    }

    /// Counts of S, E, I, R.
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for &x in &self.compartments {
            c[x as usize] += 1;
        }
        c
    }

    /// One synchronous day. Nodes flagged in `blocked` never transmit.
    pub fn step(&mut self, graph: &Graph, config: &SeirConfig, blocked: Option<&[bool]>) {
        let old = self.compartments.clone();
        let survive = 1.0 - config.beta;
        for u in 0..old.len() {
            self.compartments[u] = match old[u] {
                Compartment::S => {
                    let k = graph
                        .neighbors(u)
                        .iter()
                        .filter(|&&w| old[w] == Compartment::I && !blocked.is_some_and(|b| b[w]))
                        .count();
                    let p = 1.0 - survive.powi(k as i32);
                    if k > 0 && p > 0.0 && self.rng.random::<f64>() < p {
                        Compartment::E
                    } else {
                        Compartment::S
                    }
                }
                Compartment::E => {
                    if self.rng.random::<f64>() < config.alpha {
                        Compartment::I
                    } else {
                        Compartment::E
                    }
                }
                Compartment::I => {
                    if self.rng.random::<f64>() < config.gamma {
                        Compartment::R
                    } else {
                        Compartment::I
                    }
                }
                Compartment::R => Compartment::R,
            };
        }
        self.day += 1;
    }
}

/// Per-day compartment fractions; row `d − 1` is the state after day `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub rows: Vec<[f64; 4]>,
}

impl Curve {
    pub fn days(&self) -> usize {
        self.rows.len()
    }

    pub fn infected(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[2]).collect()
    }

    /// `day,S,E,I,R` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,S,E,I,R\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!("{},{:.6},{:.6},{:.6},{:.6}\n", i + 1, r[0], r[1], r[2], r[3]));
        }
        out
    }
}

/// Raw per-day counts of one trial.
pub fn simulate_counts(
    graph: &Graph,
    config: &SeirConfig,
    seed: u64,
    blocked: Option<&[bool]>,
) -> Result<Vec<[usize; 4]>> {
    config.validate()?;
    if let Some(b) = blocked {
        if b.len() != graph.n() {
            return Err(Error::Dimension(format!(
                "{} block flags for {} nodes",
                b.len(),
                graph.n()
            )));
        }
    }
    let mut state = EpidemicState::new(graph.n(), config, seed)?;
    let mut out = Vec::with_capacity(config.days);
    for _ in 0..config.days {
        state.step(graph, config, blocked);
        out.push(state.counts());
    }
    Ok(out)
}

pub fn simulate_seir(graph: &Graph, config: &SeirConfig, seed: u64) -> Result<Curve> {
    let n = graph.n() as f64;
    let counts = simulate_counts(graph, config, seed, None)?;
    Ok(Curve {
        rows: counts.iter().map(|c| c.map(|x| x as f64 / n)).collect(),
    })
}

/// Seeds of the `trials` runs derived from `master`.
pub fn trial_seeds(master: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64)
        .map(|t| derive_seed(master, STREAM_TRIAL, t))
        .collect()
}

/// Average over `config.trials` independent trials. Per-day counts are
/// summed as integers, so the result does not depend on scheduling.
pub fn simulate_average(graph: &Graph, config: &SeirConfig, master: u64, blocked: Option<&[bool]>) -> Result<Curve> {
    let seeds = trial_seeds(master, config.trials);
    let trials: Vec<Vec<[usize; 4]>> = seeds
        .par_iter()
        .map(|&s| simulate_counts(graph, config, s, blocked))
        .collect::<Result<_>>()?;
    let mut sums = vec![[0u64; 4]; config.days];
    for t in &trials {
        for (acc, c) in sums.iter_mut().zip(t) {
            for k in 0..4 {
                acc[k] += c[k] as u64;
            }
        }
    }
    let denom = (graph.n() * config.trials) as f64;
    Ok(Curve {
        rows: sums.iter().map(|c| c.map(|x| x as f64 / denom)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub day: usize,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub peak_a: f64,
    pub peak_b: f64,
    pub peak_diff: f64,
    /// Mean absolute daily difference of the infected fraction.
    pub l1_distance: f64,
    pub checkpoints: Vec<Checkpoint>,
}

pub const CHECKPOINT_DAYS: [usize; 5] = [30, 60, 90, 120, 180];

pub fn compare_curves(a: &Curve, b: &Curve) -> Result<CurveComparison> {
    if a.days() != b.days() {
        return Err(Error::Dimension(format!(
            "curves of {} and {} days",
            a.days(),
            b.days()
        )));
    }
    if a.days() == 0 {
        return Err(Error::InvalidArgument("empty curves".into()));
    }
    let (ia, ib) = (a.infected(), b.infected());
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x));
    let (peak_a, peak_b) = (peak(&ia), peak(&ib));
    let l1 = ia.iter().zip(&ib).map(|(x, y)| (x - y).abs()).sum::<f64>() / ia.len() as f64;
    let checkpoints = CHECKPOINT_DAYS
        .iter()
        .filter(|&&d| d <= ia.len())
        .map(|&d| Checkpoint {
            day: d,
            a: ia[d - 1],
            b: ib[d - 1],
        })
        .collect();
    Ok(CurveComparison {
        peak_a,
        peak_b,
        peak_diff: (peak_a - peak_b).abs(),
        l1_distance: l1,
        checkpoints,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub graph: Graph,
    pub removed: Vec<(usize, usize)>,
    pub added: Vec<(usize, usize)>,
}

/// Removes `⌈rate·m⌉` random real edges and adds as many random non-edges.
pub fn perturb_edges(graph: &Graph, rate: f64, seed: u64) -> Result<Perturbation> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation rate must lie in (0, 1), got {rate}"
        )));
    }
    let m = graph.m();
    let k = ceil_fraction(rate, m).min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, m, k).into_vec();
    idx.sort_unstable();
    let removed: Vec<_> = idx.iter().map(|&i| graph.edges()[i]).collect();
    let mut added = sample_negatives(graph, k, &HashSet::new(), derive_seed(seed, STREAM_PERTURB, 0))?;
    added.sort_unstable();
    let gone: HashSet<_> = removed.iter().copied().collect();
    let edges = graph
        .edges()
        .iter()
        .copied()
        .filter(|e| !gone.contains(e))
        .chain(added.iter().copied());
    Ok(Perturbation {
        graph: graph.with_edges(edges)?,
        removed,
        added,
    })
}

/// Graph with the `target` highest-scoring pairs as edges, `pinned` pairs
/// always included. Ties fall to the lexicographically smaller pair.
pub fn reconstruct_network<F>(n: usize, pinned: &[(usize, usize)], target: usize, score: F) -> Result<Graph>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let pinned_set: HashSet<(usize, usize)> = pinned.iter().map(|&(u, v)| canonical(u, v)).collect();
    let total_pairs = n * n.saturating_sub(1) / 2;
    if target > total_pairs || pinned_set.len() > target {
        return Err(Error::InvalidArgument(format!(
            "cannot place {target} edges with {} pinned on {n} nodes",
            pinned_set.len()
        )));
    }
    let mut scored: Vec<(f64, (usize, usize))> = (0..n)
        .into_par_iter()
        .flat_map_iter(|u| {
            let pinned_set = &pinned_set;
            let score = &score;
            (u + 1..n)
                .filter(move |&v| !pinned_set.contains(&(u, v)))
                .map(move |v| (score(u, v), (u, v)))
        })
        .collect();
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("scorer returned NaN".into()));
    }
    let need = target - pinned_set.len();
    let by_rank = |a: &(f64, (usize, usize)), b: &(f64, (usize, usize))| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if need < scored.len() && need > 0 {
        scored.select_nth_unstable_by(need - 1, by_rank);
    }
    scored.truncate(need);
    Graph::new(n, pinned_set.into_iter().chain(scored.into_iter().map(|(_, p)| p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Betweenness,
    Degree,
    None,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "betweenness" => Ok(Strategy::Betweenness),
            "degree" => Ok(Strategy::Degree),
            "none" => Ok(Strategy::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy {other:?}; expected betweenness, degree or none"
            ))),
        }
    }
}

/// How mitigated nodes are taken out of the contagion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationMode {
    /// Delete the nodes and their edges.
    Remove,
    /// Keep the topology; the nodes just never transmit.
    Block,
}

/// The `⌈fraction·n⌉` most central nodes, ties to the smaller index.
pub fn mitigation_targets(graph: &Graph, strategy: Strategy, fraction: f64) -> Result<Vec<usize>> {
    if strategy == Strategy::None {
        return Ok(Vec::new());
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mitigation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let scores = match strategy {
        Strategy::Betweenness => betweenness(graph),
        Strategy::Degree => degree(graph),
        Strategy::None => unreachable!(),
    };
    let k = ceil_fraction(fraction, graph.n()).min(graph.n());
    let mut order: Vec<usize> = (0..graph.n()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Removes the mitigation targets; returns the reduced graph (re-indexed)
/// and the removed node ids.
pub fn apply_mitigation(graph: &Graph, strategy: Strategy, fraction: f64) -> Result<(Graph, Vec<usize>)> {
    let targets = mitigation_targets(graph, strategy, fraction)?;
    let (g, _) = graph.remove_nodes(&targets);
    Ok((g, targets))
}

/// Averaged curve on `graph` after mitigation.
pub fn mitigated_curve(
    graph: &Graph,
    strategy: Strategy,
    fraction: f64,
    mode: MitigationMode,
    config: &SeirConfig,
    master: u64,
) -> Result<Curve> {
    match mode {
        MitigationMode::Remove => {
            let (g, _) = apply_mitigation(graph, strategy, fraction)?;
            simulate_average(&g, config, master, None)
        }
        MitigationMode::Block => {
            let mut blocked = vec![false; graph.n()];
            for u in mitigation_targets(graph, strategy, fraction)? {
                blocked[u] = true;
            }
            simulate_average(graph, config, master, Some(&blocked))
        }
    }
}

/// Pair scores read from `u v score` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: HashMap<(usize, usize), f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Unlisted pairs score `-inf`, so they are chosen last.
    pub fn score(&self, u: usize, v: usize) -> f64 {
        self.scores.get(&canonical(u, v)).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn max_node(&self) -> Option<usize> {
        self.scores.keys().map(|&(_, v)| v).max()
    }
}

/// Parses a score file: one `u v score` triple per line, `#` comments.
pub fn parse_score_file(text: &str) -> Result<ScoreTable> {
    let mut scores = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line: line_no, msg };
        if fields.len() != 3 {
            return Err(err(format!("expected `u v score`, found {} fields", fields.len())));
        }
        let u: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("invalid node id {:?}", fields[0])))?;
        let v: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("invalid node id {:?}", fields[1])))?;
        let s: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("invalid score {:?}", fields[2])))?;
        if u == v {
            return Err(err(format!("self-pair ({u}, {u})")));
        }
        if !s.is_finite() {
            return Err(err(format!("non-finite score {:?}", fields[2])));
        }
        if scores.insert(canonical(u, v), s).is_some() {
            return Err(err(format!("duplicate pair ({u}, {v})")));
        }
    }
    Ok(ScoreTable { scores })
}

/// Link scorer used for the comparison reconstruction.
#[derive(Debug, Clone)]
pub enum ExternalScorer {
    /// Another model variant, trained on the same split.
    Variant(Variant),
    /// Precomputed pair scores.
    Table(ScoreTable),
}

impl ExternalScorer {
    pub fn label(&self) -> String {
        match self {
            ExternalScorer::Variant(v) => v.name().to_string(),
            ExternalScorer::Table(_) => "score_file".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Fraction of edges swapped for fake ones; 0 skips perturbation.
    pub perturb_rate: f64,
    pub strategy: Strategy,
    pub mitigation_fraction: f64,
    pub mode: MitigationMode,
    pub seir: SeirConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            perturb_rate: 0.2,
            strategy: Strategy::Betweenness,
            mitigation_fraction: 0.2,
            mode: MitigationMode::Remove,
            seir: SeirConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub nodes: usize,
    pub edges: usize,
    pub removed: usize,
    pub added: usize,
    pub model_test_auc: f64,
    pub model: CurveComparison,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<CurveComparison>,
    pub simulation_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub base: Curve,
    pub model_curve: Curve,
    pub external_curve: Option<Curve>,
    pub perturbed: Graph,
    pub reconstructed: Graph,
}

/// Seeds of the SEIR trials used for every curve of a pipeline run.
pub fn pipeline_simulation_seed(seed: u64) -> u64 {
    derive_seed(seed, STREAM_TRIAL, u64::MAX)
}

/// Perturbs `graph`, trains the configured model on the observed edges,
/// rebuilds the network from its scores and compares mitigated contagion
/// curves against the original network. Graphs without node features get
/// standardized centralities of the observed (perturbed) graph.
pub fn run_pipeline(
    graph: &Graph,
    config: &PipelineConfig,
    external: Option<&ExternalScorer>,
) -> Result<PipelineOutcome> {
    config.seir.validate()?;
    let n = graph.n();
    let (observed, removed, added) = if config.perturb_rate == 0.0 {
        (graph.clone(), 0, 0)
    } else {
        let p = perturb_edges(graph, config.perturb_rate, derive_seed(config.seed, STREAM_PERTURB, 1))?;
        (p.graph, p.removed.len(), p.added.len())
    };
    let observed = match observed.features() {
        Some(_) => observed,
        None => {
            let x = standardize_columns(&centrality_features(&observed));
            observed.with_features(x)?
        }
    };
    let tc = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let split = split_for_run(&observed, &tc, 0)?;
    let target = observed.m();
    let sim_seed = pipeline_simulation_seed(config.seed);
    let curve_of = |g: &Graph| {
        mitigated_curve(
            g,
            config.strategy,
            config.mitigation_fraction,
            config.mode,
            &config.seir,
            sim_seed,
        )
    };

    let train_scorer = |mc: &ModelConfig| -> Result<(f64, Graph)> {
        let (record, model, outcome) = run_once(&observed, &split, mc, &tc, 0, run_seed(&tc, 0))?;
        let emb = model.embed(&outcome.params)?;
        let g = reconstruct_network(n, &split.train_pos, target, |u, v| {
            emb.raw_distance(u, v).map(|d| -d).unwrap_or(f64::NEG_INFINITY)
        })?;
        Ok((record.auc, g))
    };

    let base = curve_of(graph)?;
    let (model_test_auc, reconstructed) = train_scorer(&config.model)?;
    let model_curve = curve_of(&reconstructed)?;
    let model_cmp = compare_curves(&base, &model_curve)?;

    let (external_curve, external_cmp) = match external {
        None => (None, None),
        Some(scorer) => {
            let g = match scorer {
                ExternalScorer::Variant(v) => {
                    let mc = ModelConfig {
                        variant: *v,
                        ..config.model.clone()
                    };
                    train_scorer(&mc)?.1
                }
                ExternalScorer::Table(table) => {
                    if let Some(max) = table.max_node().filter(|&m| m >= n) {
                        return Err(Error::InvalidArgument(format!(
                            "score file mentions node {max} but the graph has {n} nodes"
                        )));
                    }
                    reconstruct_network(n, &split.train_pos, target, |u, v| table.score(u, v))?
                }
            };
            let curve = curve_of(&g)?;
            let cmp = compare_curves(&base, &curve)?;
            (Some(curve), Some(cmp))
        }
    };

    Ok(PipelineOutcome {
        report: PipelineReport {
            nodes: n,
            edges: graph.m(),
            removed,
            added,
            model_test_auc,
            model: model_cmp,
            external_label: external.map(ExternalScorer::label),
            external: external_cmp,
            simulation_seed: sim_seed,
        },
        base,
        model_curve,
        external_curve,
        perturbed: observed,
        reconstructed,
    })
}
