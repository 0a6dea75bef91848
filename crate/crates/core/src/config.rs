//! TOML configuration: preset defaults, strict key checking and
//! validation with field paths.
//!
//! ```toml
//! [task]
//! kind = "discrete"        # the only required key
//!
//! [train]
//! learning_rate = 4.0
//!
//! [objective]
//! verification = "binary"
//! ```
//!
//! Keys left out take the value of the selected [`Preset`]. An unknown key
//! is an error that names its full path and, when one is close, the key
//! that was probably meant.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Protocol};
use crate::experiments::{default_arms, Arm, ExperimentKind, ExperimentSpec, DEFAULT_GAMMAS};
use crate::objective::ObjectiveConfig;
use crate::policy::{DecodeConfig, Init};
use crate::rewards::Thresholds;
use crate::tasks::{TaskKind, TaskSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Step sizes that move tabular policies within a few hundred steps.
    #[default]
    Toy,
    /// Batch, step size and step count of the large-model recipe.
    Paper,
}

impl Preset {
    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Toy => TrainConfig::toy(),
            Preset::Paper => TrainConfig::paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub group_size: usize,
    pub batch_queries: usize,
    pub learning_rate: f64,
    pub answer_lr_scale: f64,
    pub steps: usize,
    pub inner_epochs: usize,
    pub seed: u64,
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n: usize,
    pub protocol: Protocol,
    pub seed: u64,
    pub decode: DecodeConfig,
    /// Parameters file of a separately trained verifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier: Option<PathBuf>,
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            n: self.n,
            protocol: self.protocol,
            decode: self.decode,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Margins for the sweep; a control arm with no contrasts is appended.
    pub gammas: Vec<f64>,
    pub diagnostic_samples: usize,
    /// Empty means the defaults for `kind`.
    pub arms: Vec<Arm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub task: TaskSpec,
    pub init: Init,
    pub train: TrainSection,
    pub objective: ObjectiveConfig,
    pub thresholds: Thresholds,
    pub eval: EvalSection,
    pub experiment: ExperimentSection,
}

const SECTIONS: [&str; 7] = [
    "task",
    "init",
    "train",
    "objective",
    "thresholds",
    "eval",
    "experiment",
];

impl Config {
    /// Every value `kind` gets when a file sets nothing else.
    pub fn defaults(kind: TaskKind, preset: Preset) -> Self {
        let t = preset.train();
        let e = EvalConfig::default();
        Config {
            task: TaskSpec::new(kind),
            init: t.init,
            train: TrainSection {
                group_size: t.group_size,
                batch_queries: t.batch_queries,
                learning_rate: t.learning_rate,
                answer_lr_scale: t.answer_lr_scale,
                steps: t.steps,
                inner_epochs: t.inner_epochs,
                seed: t.seed,
                decode: t.decode,
            },
            objective: t.objective,
            thresholds: t.thresholds,
            eval: EvalSection {
                n: e.n,
                protocol: e.protocol,
                seed: e.seed,
                decode: e.decode,
                verifier: None,
            },
            experiment: ExperimentSection {
                name: "experiment".into(),
                kind: ExperimentKind::Collapse,
                seeds: (0..5).collect(),
                gammas: DEFAULT_GAMMAS.to_vec(),
                diagnostic_samples: 64,
                arms: Vec::new(),
            },
        }
    }

    pub fn from_path(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, preset)
    }

    pub fn from_toml_str(text: &str, preset: Preset) -> Result<Self> {
        let user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let kind = user
            .get("task")
            .and_then(Value::as_table)
            .and_then(|t| t.get("kind"))
            .ok_or_else(|| Error::config("task.kind", "missing required key"))?;
        let kind: TaskKind = kind
            .clone()
            .try_into()
            .map_err(|e| Error::config("task.kind", first_line(&e)))?;
        let defaults = Table::try_from(Self::defaults(kind, preset))
            .map_err(|e| Error::Parse(e.to_string()))?;
        check_keys(&user, &defaults, "")?;
        let merged = merge(defaults, user);
        let cfg = Config {
            task: section(&merged, "task")?,
            init: section(&merged, "init")?,
            train: section(&merged, "train")?,
            objective: section(&merged, "objective")?,
            thresholds: section(&merged, "thresholds")?,
            eval: section(&merged, "eval")?,
            experiment: section(&merged, "experiment")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            group_size: t.group_size,
            batch_queries: t.batch_queries,
            learning_rate: t.learning_rate,
            answer_lr_scale: t.answer_lr_scale,
            steps: t.steps,
            inner_epochs: t.inner_epochs,
            decode: t.decode,
            objective: self.objective,
            thresholds: self.thresholds,
            init: self.init,
            seed: t.seed,
        }
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        let x = &self.experiment;
        let arms = if x.arms.is_empty() {
            default_arms(x.kind, &x.gammas)
        } else {
            x.arms.clone()
        };
        ExperimentSpec {
            name: x.name.clone(),
            kind: x.kind,
            task: self.task.clone(),
            train: self.train_config(),
            eval: self.eval.eval_config(),
            arms,
            seeds: x.seeds.clone(),
            diagnostic_samples: x.diagnostic_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task
            .validate()
            .map_err(|e| Error::config("task", e.to_string()))?;
        self.train_config().validate()?;
        self.eval.eval_config().validate()?;
        for (i, g) in self.experiment.gammas.iter().enumerate() {
            if !(*g > 0.0) || !g.is_finite() {
                return Err(Error::config(
                    format!("experiment.gammas[{i}]"),
                    format!("margins must be positive, got {g}"),
                ));
            }
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::config(
                "experiment.seeds",
                "at least one seed is required",
            ));
        }
        if self.experiment.diagnostic_samples == 0 {
            return Err(Error::config(
                "experiment.diagnostic_samples",
                "must be >= 1",
            ));
        }
        Ok(())
    }

    /// Canonical JSON echo of the resolved configuration.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// Git-style content hash (`blob <len>\0<bytes>`, SHA-256) of the
    /// canonical JSON echo.
    pub fn content_hash(&self) -> Result<String> {
        Ok(content_hash(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn first_line(e: &impl std::fmt::Display) -> String {
    e.to_string().lines().next().unwrap_or_default().to_string()
}

fn section<T: DeserializeOwned>(merged: &Table, name: &str) -> Result<T> {
    let value = merged
        .get(name)
        .cloned()
        .unwrap_or(Value::Table(Table::new()));
    value
        .try_into()
        .map_err(|e| Error::config(name, first_line(&e)))
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn suggestion<'a>(key: &str, known: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    known
        .into_iter()
        .map(|k| (k, strsim::normalized_damerau_levenshtein(key, k)))
        .filter(|&(_, s)| s >= 0.6)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

fn unknown_key(path: &str, key: &str, known: &[&str]) -> Error {
    let message = match suggestion(key, known.iter().copied()) {
        Some(k) => format!("unknown key `{key}`; did you mean `{k}`?"),
        None => format!("unknown key `{key}`; expected one of: {}", known.join(", ")),
    };
    Error::config(join(path, key), message)
}

fn check_table_keys(user: &Table, known: &[&str], path: &str) -> Result<()> {
    match user.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(unknown_key(path, k, known)),
        None => Ok(()),
    }
}

/// Rejects keys of `user` that have no counterpart in `defaults`.
fn check_keys(user: &Table, defaults: &Table, path: &str) -> Result<()> {
    for (key, value) in user {
        let here = join(path, key);
        match here.as_str() {
            "init" => {
                let t = expect_table(value, &here)?;
                let known: &[&str] = match t.get("kind").and_then(Value::as_str) {
                    Some("uniform") => &["kind"],
                    _ => &["kind", "accuracy"],
                };
                check_table_keys(t, known, &here)?;
                continue;
            }
            "eval.verifier" => continue,
            "experiment.arms" => {
                let arms = value
                    .as_array()
                    .ok_or_else(|| Error::config(&here, "expected an array of tables"))?;
                for (i, arm) in arms.iter().enumerate() {
                    let p = format!("{here}[{i}]");
                    check_table_keys(expect_table(arm, &p)?, &Arm::KEYS, &p)?;
                }
                continue;
            }
            _ => {}
        }
        let Some(default) = defaults.get(key) else {
            let mut known: Vec<&str> = defaults.keys().map(String::as_str).collect();
            if path.is_empty() {
                known = SECTIONS.to_vec();
            } else if path == "eval" {
                known.push("verifier");
            } else if path == "experiment" && !known.contains(&"arms") {
                known.push("arms");
            }
            if known.contains(&key.as_str()) {
                continue;
            }
            return Err(unknown_key(path, key, &known));
        };
        if let Value::Table(d) = default {
            check_keys(expect_table(value, &here)?, d, &here)?;
        }
    }
    Ok(())
}

fn expect_table<'a>(value: &'a Value, path: &str) -> Result<&'a Table> {
    value.as_table().ok_or_else(|| {
        Error::config(
            path,
            format!("expected a table, found {}", value.type_str()),
        )
    })
}

/// Deep merge; `init` and arrays are replaced as a whole.
fn merge(mut base: Table, over: Table) -> Table {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) if key != "init" => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, Value::Table(o)) if key == "init" => {
                let mut o = o;
                if o.get("kind").and_then(Value::as_str) == Some("pretrained")
                    && !o.contains_key("accuracy")
                {
                    let default = match base.get("init").and_then(|i| i.get("accuracy")) {
                        Some(a) => a.clone(),
                        None => Value::Float(0.85),
                    };
                    o.insert("accuracy".into(), default);
                }
                base.insert(key, Value::Table(o));
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
    base
}
