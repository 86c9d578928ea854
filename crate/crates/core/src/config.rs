//! Run configuration: a JSON file, a scenario file it points to, and
//! `--section.key value` overrides.
//!
//! Overrides address the run file by dotted path (`train.lr`,
//! `backbone.prognn.tau_s`, `seeds`). Paths starting with `scenario.` address
//! the scenario file instead. Values are parsed as JSON and fall back to plain
//! strings, so `--backbone.backbone gat` and `--seeds [1,2]` both work.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::env::ScenarioConfig;
use crate::eval::oracle::{DEFAULT_RESOLUTION, MAX_RESOLUTION};
use crate::gnn::BackboneConfig;
use crate::policy::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: u64,
    pub stochastic: bool,
    /// Report deviation from the exhaustive oracle.
    pub oracle: bool,
    pub oracle_resolution: usize,
    /// Granularities visited by a sweep.
    pub k_list: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            stochastic: false,
            oracle: false,
            oracle_resolution: DEFAULT_RESOLUTION,
            k_list: vec![4, 6, 8],
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_checkpoint_every() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario file, relative to the run file.
    pub scenario: PathBuf,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

/// Run and scenario after defaults, overrides and validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub run: RunConfig,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },
    #[error("{}:{line}:{column}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("{}:{line}: {field}: {msg}", path.display())]
    Invalid {
        path: PathBuf,
        line: usize,
        field: String,
        msg: String,
    },
    #[error("--{flag}: {msg}")]
    Override { flag: String, msg: String },
}

/// Splits `--a.b value` pairs out of an argument list. Everything else is
/// returned untouched, in order.
pub fn extract_overrides(args: impl IntoIterator<Item = String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.contains('.')) else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = it.next().ok_or_else(|| ConfigError::Override {
                    flag: flag.to_string(),
                    msg: "missing value".into(),
                })?;
                (flag.to_string(), value)
            }
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Loads, overrides and validates a run file and its scenario.
pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Resolved, ConfigError> {
    let text = read(path)?;
    let mut run_value: Value = parse(path, &text)?;
    parse::<RunConfig>(path, &text)?;

    let (scenario_overrides, run_overrides): (Vec<_>, Vec<_>) =
        overrides.iter().partition(|(k, _)| k.starts_with("scenario."));
    for (key, value) in &run_overrides {
        apply(&mut run_value, key, value)?;
        from_value::<RunConfig>(&run_value, key)?;
    }
    let mut run: RunConfig = from_value(&run_value, "")?;

    let base = path.parent().unwrap_or(Path::new(""));
    let scenario_path = base.join(&run.scenario);
    let scenario_text = read(&scenario_path)?;
    let mut scenario_value: Value = parse(&scenario_path, &scenario_text)?;
    parse::<ScenarioConfig>(&scenario_path, &scenario_text)?;
    for (key, value) in &scenario_overrides {
        let inner = &key["scenario.".len()..];
        apply(&mut scenario_value, inner, value).map_err(|e| rename(e, key))?;
        from_value::<ScenarioConfig>(&scenario_value, key)?;
    }
    let scenario: ScenarioConfig = from_value(&scenario_value, "")?;
    run.scenario = fs::canonicalize(&scenario_path).unwrap_or(scenario_path.clone());

    let invalid = |field: &str, msg: String, file: &Path, text: &str, section: &str| {
        let flag = overrides.iter().find(|(k, _)| k == &format!("{section}{field}") || k.ends_with(&format!(".{field}")));
        match flag {
            Some((k, _)) => ConfigError::Override { flag: k.clone(), msg },
            None => ConfigError::Invalid {
                path: file.to_path_buf(),
                line: locate(text, field),
                field: field.to_string(),
                msg,
            },
        }
    };
    let first_word = |msg: &str| msg.split_whitespace().next().unwrap_or("").to_string();

    if let Err(e) = run.train.validate() {
        let msg = e.to_string().trim_start_matches("invalid configuration: ").to_string();
        return Err(invalid(&first_word(&msg), msg, path, &text, "train."));
    }
    if let Err(msg) = run.backbone.validate() {
        return Err(invalid(&first_word(&msg), msg, path, &text, "backbone."));
    }
    if run.seeds.is_empty() {
        return Err(invalid("seeds", "seeds must not be empty".into(), path, &text, ""));
    }
    if run.checkpoint_every == 0 {
        return Err(invalid("checkpoint_every", "checkpoint_every must be at least 1".into(), path, &text, ""));
    }
    if run.eval.episodes == 0 {
        return Err(invalid("episodes", "eval episodes must be at least 1".into(), path, &text, "eval."));
    }
    if run.eval.oracle_resolution == 0 || run.eval.oracle_resolution > MAX_RESOLUTION {
        let msg = format!("oracle_resolution must lie in 1..={MAX_RESOLUTION}");
        return Err(invalid("oracle_resolution", msg, path, &text, "eval."));
    }
    if run.eval.k_list.is_empty() || run.eval.k_list.contains(&0) {
        let msg = "k_list entries must be at least 1 and the list non-empty".to_string();
        return Err(invalid("k_list", msg, path, &text, "eval."));
    }
    if let Err(e) = scenario.build() {
        let msg = e.to_string();
        let field = ["fleet_size", "horizon", "price_per_trip", "base_rate", "rate_overrides", "profile", "k"]
            .into_iter()
            .find(|f| msg.contains(f))
            .unwrap_or("graph");
        return Err(invalid(field, msg, &scenario_path, &scenario_text, "scenario."));
    }
    Ok(Resolved { run, scenario })
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: strip_position(&e.to_string()),
    })
}

fn from_value<T: DeserializeOwned>(value: &Value, flag: &str) -> Result<T, ConfigError> {
    T::deserialize(value).map_err(|e| ConfigError::Override {
        flag: flag.to_string(),
        msg: e.to_string(),
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn rename(e: ConfigError, flag: &str) -> ConfigError {
    match e {
        ConfigError::Override { msg, .. } => ConfigError::Override {
            flag: flag.to_string(),
            msg,
        },
        other => other,
    }
}

fn apply(root: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let err = |msg: &str| ConfigError::Override {
        flag: key.to_string(),
        msg: msg.to_string(),
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty path segment"));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| err("path runs through a non-object value"))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| err("path runs through a non-object value"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// First line (1-based) mentioning `"field"`, or 1.
fn locate(text: &str, field: &str) -> usize {
    let needle = format!("\"{field}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}
