//! Command-line front end: `train`, `eval` and `experiment`.
//!
//! Every command writes its outputs into `--out` and finishes with
//! `manifest.json`, so a directory with a manifest is always complete.
//! Failures print one JSON error record to stderr and exit with status 1.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{content_hash, Config, Preset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, Protocol};
use crate::experiments::{
    histogram_csv, metrics_line, record_run, run_experiment, summarize, summary_csv, write_atomic,
    write_outcome, OUTPUT_SCHEMA_VERSION,
};
use crate::policy::{read_params, write_params, PolicyParams};
use crate::tasks::Task;
use crate::trainer::Trainer;

pub const PARAMS_FILE: &str = "params.final";

#[derive(Debug, Parser)]
#[command(
    name = "adpo-lab",
    version,
    about = "Train and evaluate self-verifying toy policies"
)]
pub struct Cli {
    /// Worker threads for rollouts and experiment runs.
    #[arg(long, global = true, env = "ADPO_LAB_WORKERS")]
    pub workers: Option<usize>,

    /// Progress on stderr; repeat for every step.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one policy and evaluate it.
    Train(TrainArgs),
    /// Evaluate saved parameters under a selection protocol.
    Eval(EvalArgs),
    /// Run every arm and seed of the configured experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Toy,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Toy => Preset::Toy,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the training and evaluation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "toy")]
    pub preset: PresetArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// A parameters file, a training output directory, or `DIR/final`.
    #[arg(long)]
    pub params: PathBuf,
    /// Verifier parameters for the cross-verifier protocol.
    #[arg(long)]
    pub verifier: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Pass1,
    Majority,
    BestOfN,
    CrossVerifier,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Pass1 => Protocol::Pass1,
            ProtocolArg::Majority => Protocol::Majority,
            ProtocolArg::BestOfN => Protocol::BestOfN,
            ProtocolArg::CrossVerifier => Protocol::CrossVerifier,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Accepts a file, a directory holding `params.final`, or `DIR/final`.
pub fn resolve_params_path(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if path.is_dir() {
        let p = path.join(PARAMS_FILE);
        if p.is_file() {
            return Ok(p);
        }
    }
    if path.file_name().is_some_and(|n| n == "final") {
        if let Some(dir) = path.parent() {
            let p = dir.join(PARAMS_FILE);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(Error::config(
        "params",
        format!("no parameters found at {}", path.display()),
    ))
}

pub fn load_params(path: &Path) -> Result<PolicyParams> {
    let file = fs::File::open(resolve_params_path(path)?)?;
    read_params(BufReader::new(file))
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut cfg = Config::from_path(&common.config, common.preset.into())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
        cfg.experiment.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &Config,
    preset: PresetArg,
    outputs: &[String],
    extra: serde_json::Value,
) -> Result<()> {
    let mut files = serde_json::Map::new();
    for name in outputs {
        let bytes = fs::read(out.join(name))?;
        files.insert(name.clone(), json!(content_hash(&bytes)));
    }
    let manifest = json!({
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "tool": "adpo-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "preset": Preset::from(preset),
        "config_hash": cfg.content_hash()?,
        "config": cfg.to_json()?,
        "outputs": files,
        "details": extra,
    });
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&out.join("manifest.json"), text.as_bytes())
}

fn write_report(
    out: &Path,
    report: &EvalReport,
    diagnostic: Option<&EvalReport>,
    outputs: &mut Vec<String>,
) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    write_atomic(&out.join("eval.json"), text.as_bytes())?;
    let mut rows = vec![("eval".to_string(), None, "eval", report)];
    if let Some(d) = diagnostic {
        rows.push(("eval".to_string(), None, "rollout", d));
    }
    let hist = histogram_csv(&rows);
    write_atomic(&out.join("histogram.csv"), hist.as_bytes())?;
    outputs.push("eval.json".into());
    outputs.push("histogram.csv".into());
    Ok(())
}

fn run_train(args: &TrainArgs, verbose: u8) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let task = Task::new(cfg.task.clone())?;
    let train_cfg = cfg.train_config();
    let mut trainer = Trainer::new(&task, train_cfg.clone())?;

    let metrics_tmp = out.join("metrics.jsonl.tmp");
    let mut metrics = BufWriter::new(fs::File::create(&metrics_tmp)?);
    let mut history = Vec::with_capacity(train_cfg.steps);
    let mut wall = Vec::with_capacity(train_cfg.steps);
    let start = Instant::now();
    for _ in 0..train_cfg.steps {
        let m = trainer.advance()?;
        let t = start.elapsed().as_secs_f64();
        writeln!(metrics, "{}", metrics_line(None, &m, Some(t))?)?;
        if verbose > 1 || (verbose == 1 && (m.step + 1) % 10 == 0) {
            eprintln!(
                "step {:>5}  reward {:.3}  max-score {:.3}  kl {:.4}",
                m.step, m.mean_answer_reward, m.fraction_max_score, m.kl
            );
        }
        history.push(m);
        wall.push(t);
    }
    metrics
        .into_inner()
        .map_err(|e| e.into_error())?
        .sync_all()?;
    fs::rename(&metrics_tmp, out.join("metrics.jsonl"))?;

    let mut params_bytes = Vec::new();
    write_params(&trainer.params, &mut params_bytes)?;
    write_atomic(&out.join(PARAMS_FILE), &params_bytes)?;

    let run = record_run(
        "train",
        train_cfg.seed,
        &task,
        &train_cfg,
        &cfg.eval.eval_config(),
        cfg.experiment.diagnostic_samples,
        history,
        trainer.params,
        wall,
    )?;
    let mut outputs = vec!["metrics.jsonl".to_string(), PARAMS_FILE.to_string()];
    write_report(out, &run.eval, Some(&run.diagnostic), &mut outputs)?;
    let summary = summary_csv(&[summarize("train", &[&run])]);
    write_atomic(&out.join("summary.csv"), summary.as_bytes())?;
    outputs.push("summary.csv".into());
    let details = json!({
        "first_step_max95": run.first_step_max95,
        "witness_steps": run.witness_steps,
        "diagnostic": run.diagnostic,
    });
    write_manifest(out, "train", &cfg, args.common.preset, &outputs, details)
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(p) = args.protocol {
        cfg.eval.protocol = p.into();
    }
    if let Some(n) = args.n {
        cfg.eval.n = n;
    }
    if let Some(v) = &args.verifier {
        cfg.eval.verifier = Some(v.clone());
    }
    cfg.validate()?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let task = Task::new(cfg.task.clone())?;
    let params = load_params(&args.params)?;
    let verifier = cfg.eval.verifier.as_deref().map(load_params).transpose()?;
    let report = evaluate(&params, &cfg.eval.eval_config(), &task, verifier.as_ref())?;
    let mut outputs = Vec::new();
    write_report(out, &report, None, &mut outputs)?;
    let details = json!({
        "params": resolve_params_path(&args.params)?,
        "verifier": cfg.eval.verifier,
    });
    write_manifest(out, "eval", &cfg, args.common.preset, &outputs, details)
}

fn run_experiment_cmd(args: &ExperimentArgs, verbose: u8) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let spec = cfg.experiment_spec();
    spec.validate()?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    if verbose > 0 {
        eprintln!(
            "{}: {} arms x {} seeds",
            spec.name,
            spec.arms.len(),
            spec.seeds.len()
        );
    }
    let outcome = run_experiment(&spec)?;
    let outputs = write_outcome(&outcome, out)?;
    let details = json!({
        "name": spec.name,
        "kind": spec.kind,
        "arms": spec.arms,
        "summaries": outcome.summaries,
    });
    write_manifest(
        out,
        "experiment",
        &cfg,
        args.common.preset,
        &outputs,
        details,
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Train(a) => run_train(a, cli.verbose),
        Command::Eval(a) => run_eval(a),
        Command::Experiment(a) => run_experiment_cmd(a, cli.verbose),
    })
}

/// JSON error record printed on failure.
pub fn error_record(e: &Error) -> serde_json::Value {
    let mut rec = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Config { path, .. } = e {
        rec["path"] = json!(path);
    }
    json!({ "error": rec })
}

/// Parses process arguments, runs, and returns the exit status.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            1
        }
    }
}
