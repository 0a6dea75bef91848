//! Scripted multi-arm, multi-seed comparisons.
//!
//! An experiment trains one policy per (arm, seed), evaluates it twice (at
//! evaluation decoding for the selection protocols, and at rollout decoding
//! with a larger pool for the verification diagnostics), and aggregates
//! per-arm medians over seeds. Seed `s` fixes the task instance, the
//! training stream and the evaluation stream, so arms are paired.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::advantage::AdvantageMode;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, EvalReport, Protocol};
use crate::policy::PolicyParams;
use crate::rewards::VerificationMode;
use crate::tasks::{Task, TaskKind, TaskSpec};
use crate::trainer::{StepMetrics, TrainConfig, Trainer};

/// Version of the JSON-lines and CSV layouts written below.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_GAMMAS: [f64; 5] = [0.025, 0.05, 0.1, 0.2, 0.25];

/// A margin no answer-reward gap can exceed, so no pair is ever contrasted.
pub const CONTROL_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Collapse,
    Decoupling,
    MarginSweep,
    ScoreDistribution,
    Custom,
}

/// Per-arm changes to the shared training configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<AdvantageMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_lr_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_a: Option<f64>,
}

impl Arm {
    /// Keys accepted in an arm table.
    pub const KEYS: [&'static str; 11] = [
        "label",
        "verification",
        "advantage",
        "clip_eps",
        "kl_coeff",
        "learning_rate",
        "answer_lr_scale",
        "steps",
        "gamma",
        "tau_s",
        "tau_a",
    ];

    pub fn new(label: impl Into<String>) -> Self {
        Arm {
            label: label.into(),
            ..Default::default()
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let o = &mut cfg.objective;
        o.verification = self.verification.unwrap_or(o.verification);
        o.advantage = self.advantage.unwrap_or(o.advantage);
        o.clip_eps = self.clip_eps.unwrap_or(o.clip_eps);
        o.kl_coeff = self.kl_coeff.unwrap_or(o.kl_coeff);
        let t = &mut cfg.thresholds;
        t.gamma = self.gamma.unwrap_or(t.gamma);
        t.tau_s = self.tau_s.unwrap_or(t.tau_s);
        t.tau_a = self.tau_a.unwrap_or(t.tau_a);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.answer_lr_scale = self.answer_lr_scale.unwrap_or(cfg.answer_lr_scale);
        cfg.steps = self.steps.unwrap_or(cfg.steps);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// Pool size per query for the rollout-temperature diagnostics.
    pub diagnostic_samples: usize,
}

impl ExperimentSpec {
    /// Binary against preference verification on a small discrete task
    /// with three score bins.
    pub fn collapse() -> Self {
        ExperimentSpec {
            name: "collapse".into(),
            kind: ExperimentKind::Collapse,
            task: TaskSpec {
                num_queries: 16,
                score_bins: 3,
                ..TaskSpec::new(TaskKind::Discrete)
            },
            train: TrainConfig::toy(),
            eval: EvalConfig::default(),
            arms: default_arms(ExperimentKind::Collapse, &[]),
            seeds: (0..5).collect(),
            diagnostic_samples: 64,
        }
    }

    pub fn decoupling() -> Self {
        ExperimentSpec {
            name: "decoupling".into(),
            kind: ExperimentKind::Decoupling,
            arms: default_arms(ExperimentKind::Decoupling, &[]),
            ..Self::collapse()
        }
    }

    pub fn score_distribution() -> Self {
        ExperimentSpec {
            name: "score_distribution".into(),
            kind: ExperimentKind::ScoreDistribution,
            ..Self::collapse()
        }
    }

    /// Preference training on the interval task, one arm per margin plus
    /// the never-contrasting control.
    pub fn margin_sweep(gammas: &[f64]) -> Self {
        ExperimentSpec {
            name: "margin_sweep".into(),
            kind: ExperimentKind::MarginSweep,
            task: TaskSpec {
                num_queries: 32,
                ..TaskSpec::new(TaskKind::Interval)
            },
            arms: default_arms(ExperimentKind::MarginSweep, gammas),
            ..Self::collapse()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.arms.is_empty() {
            return Err(Error::config(
                "experiment.arms",
                "at least one arm is required",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config(
                "experiment.seeds",
                "at least one seed is required",
            ));
        }
        if self.diagnostic_samples == 0 {
            return Err(Error::config(
                "experiment.diagnostic_samples",
                "must be >= 1",
            ));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if !valid_label(&arm.label) {
                return Err(Error::config(
                    format!("experiment.arms[{i}].label"),
                    "labels must be non-empty and use only letters, digits, '.', '-', '_' or '='",
                ));
            }
            if self.arms[..i].iter().any(|a| a.label == arm.label) {
                return Err(Error::config(
                    format!("experiment.arms[{i}].label"),
                    format!("duplicate label {:?}", arm.label),
                ));
            }
            arm.apply(&self.train)
                .validate()
                .map_err(|e| Error::config(format!("experiment.arms[{i}]"), e.to_string()))?;
        }
        let modes = |m: VerificationMode| {
            self.arms
                .iter()
                .any(|a| a.apply(&self.train).objective.verification == m)
        };
        match self.kind {
            ExperimentKind::Collapse | ExperimentKind::ScoreDistribution => {
                if !modes(VerificationMode::Binary) || !modes(VerificationMode::Preference) {
                    return Err(Error::config(
                        "experiment.arms",
                        "needs at least one binary and one preference arm",
                    ));
                }
            }
            ExperimentKind::Decoupling => {
                let advantage = |m: AdvantageMode| {
                    self.arms
                        .iter()
                        .any(|a| a.apply(&self.train).objective.advantage == m)
                };
                if !advantage(AdvantageMode::Decoupled) || !advantage(AdvantageMode::Entangled) {
                    return Err(Error::config(
                        "experiment.arms",
                        "needs a decoupled and an entangled arm",
                    ));
                }
                if self.arms.iter().any(|a| {
                    a.apply(&self.train).objective.verification != VerificationMode::Preference
                }) {
                    return Err(Error::config(
                        "experiment.arms",
                        "every arm must use preference rewards",
                    ));
                }
            }
            ExperimentKind::MarginSweep => {
                if self.task.kind != TaskKind::Interval {
                    return Err(Error::config(
                        "task.kind",
                        "the margin sweep runs on the interval task",
                    ));
                }
            }
            ExperimentKind::Custom => {}
        }
        Ok(())
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '='))
}

/// Arms used when a configuration lists none.
pub fn default_arms(kind: ExperimentKind, gammas: &[f64]) -> Vec<Arm> {
    match kind {
        ExperimentKind::Collapse | ExperimentKind::ScoreDistribution => vec![
            Arm {
                verification: Some(VerificationMode::Binary),
                ..Arm::new("binary")
            },
            Arm {
                verification: Some(VerificationMode::Preference),
                ..Arm::new("preference")
            },
        ],
        ExperimentKind::Decoupling => vec![
            Arm {
                verification: Some(VerificationMode::Preference),
                advantage: Some(AdvantageMode::Decoupled),
                ..Arm::new("decoupled")
            },
            Arm {
                verification: Some(VerificationMode::Preference),
                advantage: Some(AdvantageMode::Entangled),
                ..Arm::new("entangled")
            },
        ],
        ExperimentKind::MarginSweep => {
            let gammas = if gammas.is_empty() {
                &DEFAULT_GAMMAS[..]
            } else {
                gammas
            };
            gammas
                .iter()
                .chain(std::iter::once(&CONTROL_GAMMA))
                .map(|&g| Arm {
                    verification: Some(VerificationMode::Preference),
                    gamma: Some(g),
                    ..Arm::new(format!("gamma={g}"))
                })
                .collect()
        }
        ExperimentKind::Custom => Vec::new(),
    }
}

/// One trained (arm, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: String,
    pub seed: u64,
    pub history: Vec<StepMetrics>,
    /// Selection protocols at evaluation decoding.
    pub eval: EvalReport,
    /// Verification metrics at rollout decoding.
    pub diagnostic: EvalReport,
    /// First step whose rollouts put at least 95% of scores in the top bin.
    pub first_step_max95: Option<usize>,
    pub witness_steps: usize,
    #[serde(skip)]
    pub params: Option<PolicyParams>,
    #[serde(skip)]
    pub wall_time_s: Vec<f64>,
}

/// Medians over seeds; optional metrics use the seeds where they exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub pass_at_1: f64,
    pub majority_at_n: f64,
    pub best_at_n: f64,
    pub mean_reward_pass_at_1: f64,
    pub mean_reward_best_at_n: f64,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub diagnostic_pass_at_1: f64,
    pub diagnostic_auc: Option<f64>,
    pub diagnostic_ap: Option<f64>,
    pub final_fraction_max_score: f64,
    pub first_step_max95: Option<f64>,
    pub witness_steps: f64,
    pub nonempty_bins: f64,
    /// Share of evaluation scores in the lowest or highest bin.
    pub extreme_mass: f64,
    pub diagnostic_nonempty_bins: f64,
    pub diagnostic_extreme_mass: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<ArmSummary>,
}

impl ExperimentOutcome {
    pub fn summary(&self, arm: &str) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    pub fn runs_for<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.arm == arm)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn median_of<F: Fn(&RunRecord) -> f64>(runs: &[&RunRecord], f: F) -> f64 {
    median(&runs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN)
}

fn median_opt<F: Fn(&RunRecord) -> Option<f64>>(runs: &[&RunRecord], f: F) -> Option<f64> {
    median(&runs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
}

fn extreme_mass(report: &EvalReport) -> f64 {
    let h = &report.score_histogram;
    let total: u64 = h.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let ends = h[0] + if h.len() > 1 { h[h.len() - 1] } else { 0 };
    ends as f64 / total as f64
}

pub fn summarize(label: &str, runs: &[&RunRecord]) -> ArmSummary {
    ArmSummary {
        arm: label.to_string(),
        seeds: runs.len(),
        pass_at_1: median_of(runs, |r| r.eval.pass_at_1.accuracy),
        majority_at_n: median_of(runs, |r| r.eval.majority.accuracy),
        best_at_n: median_of(runs, |r| r.eval.best_of_n.accuracy),
        mean_reward_pass_at_1: median_of(runs, |r| r.eval.pass_at_1.mean_reward),
        mean_reward_best_at_n: median_of(runs, |r| r.eval.best_of_n.mean_reward),
        auc: median_opt(runs, |r| r.eval.auc),
        ap: median_opt(runs, |r| r.eval.ap),
        diagnostic_pass_at_1: median_of(runs, |r| r.diagnostic.pass_at_1.accuracy),
        diagnostic_auc: median_opt(runs, |r| r.diagnostic.auc),
        diagnostic_ap: median_opt(runs, |r| r.diagnostic.ap),
        final_fraction_max_score: median_of(runs, |r| {
            r.history.last().map_or(f64::NAN, |m| m.fraction_max_score)
        }),
        first_step_max95: median_opt(runs, |r| r.first_step_max95.map(|s| s as f64)),
        witness_steps: median_of(runs, |r| r.witness_steps as f64),
        nonempty_bins: median_of(runs, |r| r.eval.nonempty_bins() as f64),
        extreme_mass: median_of(runs, |r| extreme_mass(&r.eval)),
        diagnostic_nonempty_bins: median_of(runs, |r| r.diagnostic.nonempty_bins() as f64),
        diagnostic_extreme_mass: median_of(runs, |r| extreme_mass(&r.diagnostic)),
    }
}

fn run_one(spec: &ExperimentSpec, arm: &Arm, seed: u64) -> Result<RunRecord> {
    let task = Task::new(TaskSpec {
        seed,
        ..spec.task.clone()
    })?;
    let cfg = TrainConfig {
        seed,
        ..arm.apply(&spec.train)
    };
    let mut trainer = Trainer::new(&task, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.steps);
    let mut wall = Vec::with_capacity(cfg.steps);
    let start = Instant::now();
    for _ in 0..cfg.steps {
        history.push(trainer.advance()?);
        wall.push(start.elapsed().as_secs_f64());
    }
    record_run(
        &arm.label,
        seed,
        &task,
        &cfg,
        &EvalConfig { seed, ..spec.eval },
        spec.diagnostic_samples,
        history,
        trainer.params,
        wall,
    )
}

/// Evaluates trained parameters and bundles them with their curve.
#[allow(clippy::too_many_arguments)]
pub fn record_run(
    label: &str,
    seed: u64,
    task: &Task,
    train: &TrainConfig,
    eval: &EvalConfig,
    diagnostic_samples: usize,
    history: Vec<StepMetrics>,
    params: PolicyParams,
    wall_time_s: Vec<f64>,
) -> Result<RunRecord> {
    let report = evaluate(&params, eval, task, None)?;
    let diag_cfg = EvalConfig {
        n: diagnostic_samples,
        protocol: Protocol::BestOfN,
        decode: train.decode,
        seed: eval.seed,
    };
    let diagnostic = evaluate(&params, &diag_cfg, task, None)?;
    Ok(RunRecord {
        arm: label.to_string(),
        seed,
        first_step_max95: history.iter().position(|m| m.fraction_max_score >= 0.95),
        witness_steps: history.iter().filter(|m| m.hacking_witness).count(),
        history,
        eval: report,
        diagnostic,
        params: Some(params),
        wall_time_s,
    })
}

/// Trains and evaluates every (arm, seed) pair. Pairs run in parallel;
/// results keep (arm, seed) order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let jobs: Vec<(&Arm, u64)> = spec
        .arms
        .iter()
        .flat_map(|a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(arm, seed)| run_one(spec, arm, seed))
        .collect::<Result<Vec<_>>>()?;
    let summaries = spec
        .arms
        .iter()
        .map(|a| {
            let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.arm == a.label).collect();
            summarize(&a.label, &rs)
        })
        .collect();
    Ok(ExperimentOutcome {
        spec: spec.clone(),
        runs,
        summaries,
    })
}

fn require_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::config(
            "experiment.kind",
            format!("expected {kind:?}, found {:?}", spec.kind),
        ));
    }
    Ok(())
}

pub fn run_collapse_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    require_kind(spec, ExperimentKind::Collapse)?;
    run_experiment(spec)
}

pub fn run_decoupling_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    require_kind(spec, ExperimentKind::Decoupling)?;
    run_experiment(spec)
}

pub fn run_margin_sweep(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    require_kind(spec, ExperimentKind::MarginSweep)?;
    run_experiment(spec)
}

pub fn run_score_distribution(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    require_kind(spec, ExperimentKind::ScoreDistribution)?;
    run_experiment(spec)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One JSON object per step. `wall_time_s` is always the last key so
/// byte-level comparisons can strip it mechanically.
pub fn metrics_line(
    seed: Option<u64>,
    m: &StepMetrics,
    wall_time_s: Option<f64>,
) -> Result<String> {
    let mut v = serde_json::to_value(m)?;
    let obj = v.as_object_mut().expect("metrics serialize to an object");
    let mut line = serde_json::Map::new();
    line.insert("schema".into(), json!(OUTPUT_SCHEMA_VERSION));
    if let Some(s) = seed {
        line.insert("seed".into(), json!(s));
    }
    for (k, val) in std::mem::take(obj) {
        line.insert(k, val);
    }
    let mut text = serde_json::to_string(&Value::Object(line))?;
    if let Some(t) = wall_time_s {
        text.pop();
        text.push_str(&format!(",\"wall_time_s\":{t:.6}}}"));
    }
    Ok(text)
}

/// Removes the trailing `wall_time_s` field that [`metrics_line`] appends.
pub fn strip_wall_time(line: &str) -> String {
    match line.rfind(",\"wall_time_s\":") {
        Some(i) => format!("{}}}", &line[..i]),
        None => line.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub const SUMMARY_HEADER: &str = "arm,seeds,pass_at_1,majority_at_n,best_at_n,mean_reward_pass_at_1,mean_reward_best_at_n,auc,ap,diagnostic_pass_at_1,diagnostic_auc,diagnostic_ap,final_fraction_max_score,first_step_max95,witness_steps,nonempty_bins,extreme_mass,diagnostic_nonempty_bins,diagnostic_extreme_mass";

pub fn summary_csv(summaries: &[ArmSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{},{},{:.6},{},{},{},{:.6},{},{:.6}\n",
            s.arm,
            s.seeds,
            s.pass_at_1,
            s.majority_at_n,
            s.best_at_n,
            s.mean_reward_pass_at_1,
            s.mean_reward_best_at_n,
            fmt_opt(s.auc),
            fmt_opt(s.ap),
            s.diagnostic_pass_at_1,
            fmt_opt(s.diagnostic_auc),
            fmt_opt(s.diagnostic_ap),
            s.final_fraction_max_score,
            fmt_opt(s.first_step_max95),
            s.witness_steps,
            s.nonempty_bins,
            s.extreme_mass,
            s.diagnostic_nonempty_bins,
            s.diagnostic_extreme_mass,
        ));
    }
    out
}

/// Rows are `(arm, seed, decoding label, report)`.
pub fn histogram_csv(rows: &[(String, Option<u64>, &str, &EvalReport)]) -> String {
    let mut out = String::from("arm,seed,decode,bin,score,count\n");
    for (arm, seed, decode, report) in rows {
        let b = report.score_histogram.len();
        for (bin, count) in report.score_histogram.iter().enumerate() {
            let score = if b > 1 {
                bin as f64 / (b - 1) as f64
            } else {
                0.0
            };
            let seed = seed.map_or(String::new(), |s| s.to_string());
            out.push_str(&format!("{arm},{seed},{decode},{bin},{score:.6},{count}\n"));
        }
    }
    out
}

/// Writes per-arm curves and reports, the summary table and score
/// histograms under `dir`. The manifest is the caller's last write.
pub fn write_outcome(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    for arm in &outcome.spec.arms {
        let arm_dir = dir.join("arms").join(&arm.label);
        fs::create_dir_all(&arm_dir)?;
        let mut curves = String::new();
        let mut reports = Vec::new();
        for run in outcome.runs_for(&arm.label) {
            for (m, t) in run.history.iter().zip(&run.wall_time_s) {
                curves.push_str(&metrics_line(Some(run.seed), m, Some(*t))?);
                curves.push('\n');
            }
            reports.push(json!({
                "seed": run.seed,
                "first_step_max95": run.first_step_max95,
                "witness_steps": run.witness_steps,
                "eval": run.eval,
                "diagnostic": run.diagnostic,
            }));
        }
        write_atomic(&arm_dir.join("metrics.jsonl"), curves.as_bytes())?;
        let reports = serde_json::to_string_pretty(&Value::Array(reports))? + "\n";
        write_atomic(&arm_dir.join("reports.json"), reports.as_bytes())?;
        written.push(format!("arms/{}/metrics.jsonl", arm.label));
        written.push(format!("arms/{}/reports.json", arm.label));
    }
    write_atomic(
        &dir.join("summary.csv"),
        summary_csv(&outcome.summaries).as_bytes(),
    )?;
    written.push("summary.csv".into());
    let rows: Vec<_> = outcome
        .runs
        .iter()
        .flat_map(|r| {
            [
                (r.arm.clone(), Some(r.seed), "eval", &r.eval),
                (r.arm.clone(), Some(r.seed), "rollout", &r.diagnostic),
            ]
        })
        .collect();
    write_atomic(&dir.join("histograms.csv"), histogram_csv(&rows).as_bytes())?;
    written.push("histograms.csv".into());
    Ok(written)
}
