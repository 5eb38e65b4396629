use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use bscnets::config::{parse_config, RunConfig};
use bscnets::epidemic::{
    parse_score_file, pipeline_simulation_seed, run_pipeline, trial_seeds, ExternalScorer, Strategy,
};
use bscnets::features::{centrality_features, standardize_columns};
use bscnets::graph::{
    load_bundle, parse_edge_list, parse_features_csv, write_bundle, Graph, EDGES_FILE, FEATURES_FILE,
};
use bscnets::model::{read_checkpoint, write_checkpoint, Model, Variant};
use bscnets::training::{
    grid_search, roc_auc, run_experiment, run_experiment_with_params, run_seed, split_for_run, GridSpec,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "bscnets",
    version,
    about = "Block simplicial complex networks for link prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset bundle from an edge list.
    Prepare(PrepareArgs),
    /// Train the configured model for `runs` seeds.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train the full model and its three ablations.
    Ablate(RunArgs),
    /// Sweep hyperparameters and report the best validation cell.
    Grid(GridArgs),
    /// Perturb, reconstruct and compare mitigated SEIR curves.
    Epidemic(EpidemicArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Use standardized centralities as features.
    #[arg(long)]
    synthesize_features: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the config run count.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// JSON value lists; omitted keys use the default grid.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct EpidemicArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    perturb: Option<f64>,
    /// betweenness, degree or none.
    #[arg(long)]
    strategy: Option<String>,
    /// `u v score` lines used as the external scorer.
    #[arg(long, conflicts_with = "external_variant")]
    scorer_file: Option<PathBuf>,
    /// Ablation variant used as the external scorer.
    #[arg(long)]
    external_variant: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    started_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<RunConfig>,
    seeds: Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    timings: Value,
}

/// Collects inputs, outputs and timings of one command.
struct Run {
    command: &'static str,
    started: Instant,
    started_unix: u64,
    out: PathBuf,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, out: &Path) -> Result<Run> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            command,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    fn read_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, text)
    }

    fn load_bundle(&mut self, dir: &Path) -> Result<Graph> {
        for name in [EDGES_FILE, FEATURES_FILE] {
            self.read(&dir.join(name))?;
        }
        Ok(load_bundle(dir)?)
    }

    fn finish(mut self, config: Option<RunConfig>, seeds: Value, mut timings: Value) -> Result<()> {
        timings["total_seconds"] = json!(self.started.elapsed().as_secs_f64());
        let manifest_path = self.out.join("manifest.json");
        self.outputs.push(manifest_path.display().to_string());
        let manifest = Manifest {
            command: self.command,
            started_unix: self.started_unix,
            config,
            seeds,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            timings,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&manifest_path, text).with_context(|| format!("writing {}", manifest_path.display()))
    }
}

fn load_config(run: &mut Run, common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = run.read_text(path)?;
            parse_config(&text).with_context(|| path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let mut run = Run::new("prepare", &args.out)?;
    let text = run.read_text(&args.edges)?;
    let pairs = parse_edge_list(&text).with_context(|| format!("parsing {}", args.edges.display()))?;
    let max_id = pairs.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
    let graph = match (&args.features, args.synthesize_features) {
        (Some(_), true) => bail!("--features and --synthesize-features are mutually exclusive"),
        (None, false) => bail!("no node features: pass --features PATH or --synthesize-features"),
        (Some(path), false) => {
            let text = run.read_text(path)?;
            let x = parse_features_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
            if x.nrows() < max_id {
                bail!(
                    "{} has {} rows but {} mentions node {}",
                    path.display(),
                    x.nrows(),
                    args.edges.display(),
                    max_id - 1
                );
            }
            Graph::new(x.nrows(), pairs)
                .and_then(|g| g.with_features(x))
                .with_context(|| format!("building graph from {}", args.edges.display()))?
        }
        (None, true) => {
            let g =
                Graph::new(max_id, pairs).with_context(|| format!("building graph from {}", args.edges.display()))?;
            let x = standardize_columns(&centrality_features(&g));
            g.with_features(x)?
        }
    };
    let stats = write_bundle(&args.out, &graph)?;
    for name in [EDGES_FILE, FEATURES_FILE, bscnets::graph::STATS_FILE] {
        run.outputs.push(args.out.join(name).display().to_string());
    }
    println!("n = {}, m = {}, q = {}", stats.n, stats.m, stats.q);
    run.finish(None, json!({}), json!({}))
}

fn run_seeds(cfg: &RunConfig) -> Value {
    json!({
        "master": cfg.train.seed,
        "runs": (0..cfg.train.runs).map(|r| run_seed(&cfg.train, r)).collect::<Vec<_>>(),
    })
}

fn cmd_train(args: &RunArgs, ablate: bool) -> Result<()> {
    let command = if ablate { "ablate" } else { "train" };
    let mut run = Run::new(command, &args.common.out)?;
    let mut cfg = load_config(&mut run, &args.common)?;
    if let Some(runs) = args.runs {
        cfg.train.runs = runs;
    }
    cfg.validate()?;
    let graph = run.load_bundle(&args.common.data)?;
    let name = dataset_name(&args.common.data);
    let t = Instant::now();
    if ablate {
        let report = run_experiment(&name, &graph, &cfg.model, &cfg.train, &Variant::ALL)?;
        run.write_json("report.json", &report)?;
    } else {
        let (report, params) = run_experiment_with_params(&name, &graph, &cfg.model, &cfg.train, &[])?;
        run.write_json("report.json", &report)?;
        run.write("model.ckpt", write_checkpoint(&cfg.model, &params))?;
    }
    let secs = t.elapsed().as_secs_f64();
    let seeds = run_seeds(&cfg);
    run.finish(Some(cfg), seeds, json!({ "training_seconds": secs }))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut run = Run::new("eval", &args.common.out)?;
    let cfg = load_config(&mut run, &args.common)?;
    let bytes = run.read(&args.checkpoint)?;
    let (mc, params) = read_checkpoint(&bytes).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let graph = run.load_bundle(&args.common.data)?;
    let t = Instant::now();
    let split = split_for_run(&graph, &cfg.train, 0)?;
    let features = graph.features().expect("bundles carry features").clone();
    let model = Model::build(
        &split.train_graph(&graph)?,
        features,
        mc.clone(),
        run_seed(&cfg.train, 0),
    )?;
    let emb = model.embed(&params).context("checkpoint does not fit this dataset")?;
    let test_auc = roc_auc(&emb.score_pairs(&split.test_pos)?, &emb.score_pairs(&split.test_neg)?)?;
    let val_auc = roc_auc(&emb.score_pairs(&split.val_pos)?, &emb.score_pairs(&split.val_neg)?)?;
    let report = json!({
        "dataset": dataset_name(&args.common.data),
        "test_auc": test_auc,
        "val_auc": val_auc,
        "model": mc,
    });
    run.write_json("report.json", &report)?;
    let secs = t.elapsed().as_secs_f64();
    let seeds = json!({ "master": cfg.train.seed, "split": 0, "build": run_seed(&cfg.train, 0) });
    run.finish(Some(cfg), seeds, json!({ "eval_seconds": secs }))
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let mut run = Run::new("grid", &args.common.out)?;
    let cfg = load_config(&mut run, &args.common)?;
    cfg.validate()?;
    let spec = match &args.grid {
        None => GridSpec::default(),
        Some(path) => {
            let text = run.read_text(path)?;
            let overrides: serde_json::Map<String, Value> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let mut base = serde_json::to_value(GridSpec::default())?;
            for (k, v) in overrides {
                if base.get(&k).is_none() {
                    bail!("{}: unknown grid key {k:?}", path.display());
                }
                base[&k] = v;
            }
            serde_json::from_value(base).with_context(|| format!("parsing {}", path.display()))?
        }
    };
    let graph = run.load_bundle(&args.common.data)?;
    let t = Instant::now();
    let cells = spec.cells(&cfg.model, &cfg.train);
    let report = grid_search(&dataset_name(&args.common.data), &graph, &cells, &cfg.train)?;
    let best = &report.cells[report.best];
    println!(
        "best cell {} of {}: val_loss {:.6}, val_auc {:.4}",
        report.best,
        report.cells.len(),
        best.val_loss,
        best.val_auc
    );
    run.write_json("report.json", &report)?;
    let secs = t.elapsed().as_secs_f64();
    let seeds = json!({ "master": cfg.train.seed, "cell": run_seed(&cfg.train, 0) });
    run.finish(Some(cfg), seeds, json!({ "grid_seconds": secs }))
}

fn cmd_epidemic(args: &EpidemicArgs) -> Result<()> {
    let mut run = Run::new("epidemic", &args.common.out)?;
    let mut cfg = load_config(&mut run, &args.common)?;
    if let Some(p) = args.perturb {
        cfg.perturb_rate = p;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse::<Strategy>()?;
    }
    if let Some(t) = args.trials {
        cfg.seir.trials = t;
    }
    cfg.validate()?;
    let external = match (&args.scorer_file, &args.external_variant) {
        (Some(path), _) => {
            let text = run.read_text(path)?;
            let table = parse_score_file(&text).with_context(|| format!("parsing {}", path.display()))?;
            Some(ExternalScorer::Table(table))
        }
        (None, Some(name)) => {
            let v = Variant::from_name(name).with_context(|| format!("unknown variant {name:?}"))?;
            Some(ExternalScorer::Variant(v))
        }
        (None, None) => None,
    };
    let graph = run.load_bundle(&args.common.data)?;
    let t = Instant::now();
    let seed = cfg.train.seed;
    let outcome = run_pipeline(&graph, &cfg.pipeline(seed), external.as_ref())?;
    run.write("curves_base.csv", outcome.base.to_csv())?;
    run.write("curves_model.csv", outcome.model_curve.to_csv())?;
    if let Some(c) = &outcome.external_curve {
        run.write("curves_external.csv", c.to_csv())?;
    }
    run.write_json("report.json", &outcome.report)?;
    println!(
        "model L1 distance {:.6}{}",
        outcome.report.model.l1_distance,
        outcome
            .report
            .external
            .as_ref()
            .map(|e| format!(", external {:.6}", e.l1_distance))
            .unwrap_or_default()
    );
    let secs = t.elapsed().as_secs_f64();
    let sim = pipeline_simulation_seed(seed);
    let seeds = json!({
        "master": seed,
        "training": run_seed(&cfg.train, 0),
        "simulation": sim,
        "trials": trial_seeds(sim, cfg.seir.trials),
    });
    run.finish(Some(cfg), seeds, json!({ "pipeline_seconds": secs }))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BSCNETS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("BSCNETS_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a, false),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_train(a, true),
        Command::Grid(a) => cmd_grid(a),
        Command::Epidemic(a) => cmd_epidemic(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
