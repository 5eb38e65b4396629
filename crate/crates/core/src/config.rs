//! Flat `key = value` run configuration (TOML syntax, no tables).
//!
//! Every key is optional; unknown keys, wrong types and out-of-range values
//! are all collected and reported together.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::epidemic::{MitigationMode, PipelineConfig, SeirConfig, Strategy};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RelationKind, Variant};
use crate::training::TrainConfig;

/// Learning rates accepted without `custom_learning_rate = true`.
pub const LEARNING_RATES: [f64; 5] = [0.001, 0.005, 0.008, 0.01, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seir: SeirConfig,
    pub perturb_rate: f64,
    pub strategy: Strategy,
    pub mitigation_fraction: f64,
    pub mitigation_mode: MitigationMode,
    pub custom_learning_rate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            model: p.model,
            train: p.train,
            seir: p.seir,
            perturb_rate: p.perturb_rate,
            strategy: p.strategy,
            mitigation_fraction: p.mitigation_fraction,
            mitigation_mode: p.mode,
            custom_learning_rate: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.check(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn check(&self, errs: &mut Vec<String>) {
        for result in [self.model.validate(), self.train.validate(), self.seir.validate()] {
            if let Err(Error::Config(list)) = result {
                errs.extend(list);
            }
        }
        if !self.custom_learning_rate && !LEARNING_RATES.contains(&self.train.learning_rate) {
            errs.push(format!(
                "learning_rate must be one of {LEARNING_RATES:?} unless custom_learning_rate = true, got {}",
                self.train.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.perturb_rate) {
            errs.push(format!("perturb_rate must lie in [0, 1), got {}", self.perturb_rate));
        }
        if !(self.mitigation_fraction > 0.0 && self.mitigation_fraction < 1.0) {
            errs.push(format!(
                "mitigation_fraction must lie in (0, 1), got {}",
                self.mitigation_fraction
            ));
        }
    }

    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            perturb_rate: self.perturb_rate,
            strategy: self.strategy,
            mitigation_fraction: self.mitigation_fraction,
            mode: self.mitigation_mode,
            seir: self.seir.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            seed,
        }
    }

    /// Renders every key; `parse_config` reads the result back unchanged.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let s = &self.seir;
        let mut table = Table::new();
        let mut put = |k: &str, v: Value| {
            table.insert(k.to_string(), v);
        };
        put("nhid1", Value::Integer(m.nhid1 as i64));
        put("nhid2", Value::Integer(m.nhid2 as i64));
        put("nhid3", Value::Integer(m.nhid3 as i64));
        put("d_c", Value::Integer(m.d_c as i64));
        put("r", Value::Integer(m.r as i64));
        put("relation", Value::String(relation_name(m.relation).into()));
        put("dropout", Value::Float(m.dropout));
        put("pi_alpha", Value::Float(m.pi_alpha));
        put("pi_beta", Value::Float(m.pi_beta));
        put("delta", Value::Float(m.delta));
        put("eta", Value::Float(m.eta));
        put("epsilon", Value::Float(m.epsilon));
        put("variant", Value::String(m.variant.name().into()));
        put("learning_rate", Value::Float(t.learning_rate));
        put("max_epochs", Value::Integer(t.max_epochs as i64));
        put("patience", Value::Integer(t.patience as i64));
        put("beta1", Value::Float(t.beta1));
        put("beta2", Value::Float(t.beta2));
        put("adam_eps", Value::Float(t.adam_eps));
        put("runs", Value::Integer(t.runs as i64));
        put("seed", Value::Integer(t.seed as i64));
        put("resplit", Value::Boolean(t.resplit));
        put("custom_learning_rate", Value::Boolean(self.custom_learning_rate));
        put("beta", Value::Float(s.beta));
        put("alpha", Value::Float(s.alpha));
        put("gamma", Value::Float(s.gamma));
        put("days", Value::Integer(s.days as i64));
        put("trials", Value::Integer(s.trials as i64));
        put("initial_fraction", Value::Float(s.initial_fraction));
        if let Some(nodes) = &s.initial_nodes {
            put(
                "initial_nodes",
                Value::Array(nodes.iter().map(|&u| Value::Integer(u as i64)).collect()),
            );
        }
        put("perturb_rate", Value::Float(self.perturb_rate));
        put("strategy", Value::String(strategy_name(self.strategy).into()));
        put("mitigation_fraction", Value::Float(self.mitigation_fraction));
        put("mitigation_mode", Value::String(mode_name(self.mitigation_mode).into()));
        table.to_string()
    }
}

fn relation_name(r: RelationKind) -> &'static str {
    match r {
        RelationKind::InnerProduct => "inner_product",
        RelationKind::Embedded => "embedded",
    }
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Betweenness => "betweenness",
        Strategy::Degree => "degree",
        Strategy::None => "none",
    }
}

fn mode_name(m: MitigationMode) -> &'static str {
    match m {
        MitigationMode::Remove => "remove",
        MitigationMode::Block => "block",
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

fn as_float(key: &str, v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("{key}: expected a number, got {}", type_name(other))),
    }
}

fn as_uint(key: &str, v: &Value) -> std::result::Result<u64, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(i) => Err(format!("{key}: expected a non-negative integer, got {i}")),
        other => Err(format!("{key}: expected an integer, got {}", type_name(other))),
    }
}

fn as_usize(key: &str, v: &Value) -> std::result::Result<usize, String> {
    as_uint(key, v).and_then(|x| usize::try_from(x).map_err(|_| format!("{key}: {x} is too large")))
}

fn as_bool(key: &str, v: &Value) -> std::result::Result<bool, String> {
    match v {
        Value::Boolean(b) => Ok(*b),
        other => Err(format!("{key}: expected a boolean, got {}", type_name(other))),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> std::result::Result<&'a str, String> {
    match v {
        Value::String(s) => Ok(s),
        other => Err(format!("{key}: expected a string, got {}", type_name(other))),
    }
}

fn apply(cfg: &mut RunConfig, key: &str, v: &Value) -> std::result::Result<(), String> {
    let m = &mut cfg.model;
    let t = &mut cfg.train;
    let s = &mut cfg.seir;
    match key {
        "nhid1" => m.nhid1 = as_usize(key, v)?,
        "nhid2" => m.nhid2 = as_usize(key, v)?,
        "nhid3" => m.nhid3 = as_usize(key, v)?,
        "d_c" => m.d_c = as_usize(key, v)?,
        "r" => {
            let r = as_uint(key, v)?;
            m.r = u32::try_from(r).map_err(|_| format!("{key}: {r} is too large"))?;
        }
        "relation" => {
            m.relation = match as_str(key, v)? {
                "inner_product" => RelationKind::InnerProduct,
                "embedded" => RelationKind::Embedded,
                other => {
                    return Err(format!(
                        "{key}: unknown relation {other:?}; expected inner_product or embedded"
                    ))
                }
            }
        }
        "dropout" => m.dropout = as_float(key, v)?,
        "pi_alpha" => m.pi_alpha = as_float(key, v)?,
        "pi_beta" => m.pi_beta = as_float(key, v)?,
        "delta" => m.delta = as_float(key, v)?,
        "eta" => m.eta = as_float(key, v)?,
        "epsilon" => m.epsilon = as_float(key, v)?,
        "variant" => {
            let name = as_str(key, v)?;
            m.variant = Variant::from_name(name).ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("{key}: unknown variant {name:?}; expected one of {names:?}")
            })?
        }
        "learning_rate" => t.learning_rate = as_float(key, v)?,
        "max_epochs" => t.max_epochs = as_usize(key, v)?,
        "patience" => t.patience = as_usize(key, v)?,
        "beta1" => t.beta1 = as_float(key, v)?,
        "beta2" => t.beta2 = as_float(key, v)?,
        "adam_eps" => t.adam_eps = as_float(key, v)?,
        "runs" => t.runs = as_usize(key, v)?,
        "seed" => t.seed = as_uint(key, v)?,
        "resplit" => t.resplit = as_bool(key, v)?,
        "custom_learning_rate" => cfg.custom_learning_rate = as_bool(key, v)?,
        "beta" => s.beta = as_float(key, v)?,
        "alpha" => s.alpha = as_float(key, v)?,
        "gamma" => s.gamma = as_float(key, v)?,
        "days" => s.days = as_usize(key, v)?,
        "trials" => s.trials = as_usize(key, v)?,
        "initial_fraction" => s.initial_fraction = as_float(key, v)?,
        "initial_nodes" => {
            let Value::Array(items) = v else {
                return Err(format!("{key}: expected an array, got {}", type_name(v)));
            };
            let nodes = items
                .iter()
                .map(|x| as_usize(key, x))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            s.initial_nodes = Some(nodes);
        }
        "perturb_rate" => cfg.perturb_rate = as_float(key, v)?,
        "strategy" => cfg.strategy = as_str(key, v)?.parse().map_err(|e: Error| format!("{key}: {e}"))?,
        "mitigation_fraction" => cfg.mitigation_fraction = as_float(key, v)?,
        "mitigation_mode" => {
            cfg.mitigation_mode = match as_str(key, v)? {
                "remove" => MitigationMode::Remove,
                "block" => MitigationMode::Block,
                other => return Err(format!("{key}: unknown mode {other:?}; expected remove or block")),
            }
        }
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a configuration. Syntax errors carry a line
/// number; semantic problems come back together as `Error::Config`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    let mut cfg = RunConfig::default();
    let mut errs = Vec::new();
    for (key, value) in &table {
        if let Err(e) = apply(&mut cfg, key, value) {
            errs.push(e);
        }
    }
    cfg.check(&mut errs);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}
