//! The toy policy: contextual tabular softmax heads.
//!
//! For each query the policy emits one token per answer position from a
//! per-(query, position) logit row, then one score token from `B` bins
//! conditioned on the (query, complete answer) pair. Score bin `b` maps to
//! the verification score `b / (B - 1)`.
//!
//! The score logits are `table[q, answer, b] + slope * b / (B - 1)`. The
//! single `slope` is shared by every score context, so a tendency to emit
//! high scores learned on frequent (correct) answers transfers to rare
//! ones. Without any shared parameter each answer's score row would be
//! trained in isolation.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::RewardBundle;
use crate::tasks::{Query, Task, TaskSpec};

pub const MIN_TEMPERATURE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
}

impl DecodeConfig {
    /// Rollout decoding: `T = 1`, `top-p = 0.99`.
    pub const ROLLOUT: DecodeConfig = DecodeConfig {
        temperature: 1.0,
        top_p: 0.99,
    };
    /// Evaluation decoding: `T = 0.2`, `top-p = 0.99`.
    pub const EVAL: DecodeConfig = DecodeConfig {
        temperature: 0.2,
        top_p: 0.99,
    };
    /// The untruncated training-time density.
    pub const EXACT: DecodeConfig = DecodeConfig {
        temperature: 1.0,
        top_p: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::OutOfDomain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::OutOfDomain(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }

    pub fn effective_temperature(&self) -> f64 {
        self.temperature.max(MIN_TEMPERATURE)
    }
}

/// Where a token is emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Context {
    Answer { query: usize, position: usize },
    Score { query: usize, answer: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub num_queries: usize,
    pub answer_vocabs: Vec<usize>,
    pub score_bins: usize,
}

impl PolicyShape {
    pub fn for_task(spec: &TaskSpec) -> Self {
        PolicyShape {
            num_queries: spec.num_queries,
            answer_vocabs: spec.answer_vocabs(),
            score_bins: spec.score_bins,
        }
    }

    pub fn num_answers(&self) -> usize {
        self.answer_vocabs.iter().product()
    }

    pub fn positions(&self) -> usize {
        self.answer_vocabs.len()
    }

    pub fn score_value(&self, bin: usize) -> f64 {
        bin as f64 / (self.score_bins - 1) as f64
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.num_queries * self.answer_vocabs.iter().sum::<usize>()
            + self.num_queries * self.num_answers() * self.score_bins
            + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn answer_index(&self, tokens: &[usize]) -> Result<usize> {
        if tokens.len() != self.positions() {
            return Err(Error::MalformedRollout(format!(
                "expected {} answer tokens, got {}",
                self.positions(),
                tokens.len()
            )));
        }
        let mut index = 0;
        for (&tok, &v) in tokens.iter().zip(&self.answer_vocabs) {
            if tok >= v {
                return Err(Error::MalformedRollout(format!(
                    "token {tok} outside vocabulary {v}"
                )));
            }
            index = index * v + tok;
        }
        Ok(index)
    }

    fn vocab(&self, ctx: Context) -> usize {
        match ctx {
            Context::Answer { position, .. } => self.answer_vocabs[position],
            Context::Score { .. } => self.score_bins,
        }
    }
}

/// Policy parameters. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    /// One `[num_queries x vocab]` row-major table per answer position.
    pub answer_logits: Vec<Vec<f64>>,
    /// `[num_queries x num_answers x score_bins]`, row-major.
    pub score_logits: Vec<f64>,
    /// Shared ordinal bias on score bins.
    pub score_slope: f64,
}

/// Initialization of the answer head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    Uniform,
    /// Answer logits biased toward the reference answer so that the
    /// probability of emitting it is `accuracy`.
    Pretrained {
        accuracy: f64,
    },
}

/// Bias that gives one token probability `target` among `vocab` otherwise
/// equal logits: solves `e^b / (e^b + vocab - 1) = target`.
pub fn pretrained_bias(target: f64, vocab: usize) -> f64 {
    (target * (vocab - 1) as f64 / (1.0 - target)).ln()
}

pub fn init_params(task: &Task, init: Init) -> Result<PolicyParams> {
    let mut params = PolicyParams::zeros(PolicyShape::for_task(&task.spec));
    if let Init::Pretrained { accuracy } = init {
        if !(accuracy > 0.0 && accuracy < 1.0) {
            return Err(Error::OutOfDomain(format!(
                "pretrained accuracy must lie in (0, 1), got {accuracy}"
            )));
        }
        // spread the target over positions so the joint answer hits it
        let positions = params.shape.positions() as f64;
        let per_position = accuracy.powf(1.0 / positions);
        for query in &task.queries {
            for (pos, tok) in task.spec.reference_tokens(query).into_iter().enumerate() {
                let vocab = params.shape.answer_vocabs[pos];
                params.answer_logits[pos][query.id * vocab + tok] =
                    pretrained_bias(per_position, vocab);
            }
        }
    }
    Ok(params)
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        let answer_logits = shape
            .answer_vocabs
            .iter()
            .map(|&v| vec![0.0; shape.num_queries * v])
            .collect();
        let score_logits = vec![0.0; shape.num_queries * shape.num_answers() * shape.score_bins];
        PolicyParams {
            shape,
            answer_logits,
            score_logits,
            score_slope: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    fn check_context(&self, ctx: Context) -> Result<()> {
        let ok = match ctx {
            Context::Answer { query, position } => {
                query < self.shape.num_queries && position < self.shape.positions()
            }
            Context::Score { query, answer } => {
                query < self.shape.num_queries && answer < self.shape.num_answers()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "context {ctx:?} outside policy shape"
            )))
        }
    }

    fn score_offset(&self, query: usize, answer: usize) -> usize {
        (query * self.shape.num_answers() + answer) * self.shape.score_bins
    }

    /// Logits at `ctx` (before temperature).
    pub fn logits(&self, ctx: Context) -> Vec<f64> {
        match ctx {
            Context::Answer { query, position } => {
                let v = self.shape.answer_vocabs[position];
                self.answer_logits[position][query * v..(query + 1) * v].to_vec()
            }
            Context::Score { query, answer } => {
                let off = self.score_offset(query, answer);
                let b = self.shape.score_bins;
                (0..b)
                    .map(|bin| {
                        self.score_logits[off + bin]
                            + self.score_slope * self.shape.score_value(bin)
                    })
                    .collect()
            }
        }
    }

    /// Accumulates `scale * dlogits` at `ctx` into this (gradient) container,
    /// applying the chain rule through the shared score slope.
    pub fn add_logit_gradient(&mut self, ctx: Context, dlogits: &[f64], scale: f64) {
        match ctx {
            Context::Answer { query, position } => {
                let v = self.shape.answer_vocabs[position];
                let row = &mut self.answer_logits[position][query * v..(query + 1) * v];
                for (g, d) in row.iter_mut().zip(dlogits) {
                    *g += scale * d;
                }
            }
            Context::Score { query, answer } => {
                let off = self.score_offset(query, answer);
                let mut slope = 0.0;
                for (bin, d) in dlogits.iter().enumerate() {
                    self.score_logits[off + bin] += scale * d;
                    slope += d * self.shape.score_value(bin);
                }
                self.score_slope += scale * slope;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.answer_logits
            .iter()
            .flatten()
            .chain(self.score_logits.iter())
            .chain(std::iter::once(&self.score_slope))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.answer_logits
            .iter_mut()
            .flatten()
            .chain(self.score_logits.iter_mut())
            .chain(std::iter::once(&mut self.score_slope))
    }

    /// Flat view in the serialization order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn from_flat(shape: PolicyShape, values: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(shape);
        if values.len() != params.shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                params.shape.len(),
                values.len()
            )));
        }
        for (dst, &src) in params.iter_mut().zip(values) {
            *dst = src;
        }
        Ok(params)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &PolicyParams) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("axpy operands differ in shape".into()));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn scale_answer_head(&mut self, factor: f64) {
        for v in self.answer_logits.iter_mut().flatten() {
            *v *= factor;
        }
    }

    /// Number of answer-head parameters; they lead the flat order.
    pub fn answer_head_len(&self) -> usize {
        self.answer_logits.iter().map(Vec::len).sum()
    }
}

/// Deep independent copy, used for the behavior and reference policies.
pub fn snapshot(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

/// Log-probabilities after temperature and top-p truncation. Truncated
/// tokens get `-inf`.
pub fn decode_log_distribution(logits: &[f64], cfg: &DecodeConfig) -> Vec<f64> {
    let t = cfg.effective_temperature();
    let scaled: Vec<f64> = if t == 1.0 {
        logits.to_vec()
    } else {
        logits.iter().map(|&z| z / t).collect()
    };
    let mut logp = log_softmax(&scaled);
    if cfg.top_p >= 1.0 {
        return logp;
    }
    let mut order: Vec<usize> = (0..logp.len()).collect();
    order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]));
    let mut mass = 0.0;
    let mut keep = order.len();
    for (k, &tok) in order.iter().enumerate() {
        mass += logp[tok].exp();
        if mass >= cfg.top_p {
            keep = k + 1;
            break;
        }
    }
    if keep < order.len() {
        let kept: Vec<f64> = order[..keep].iter().map(|&tok| logp[tok]).collect();
        let norm = log_sum_exp(&kept);
        for &tok in &order[keep..] {
            logp[tok] = f64::NEG_INFINITY;
        }
        for &tok in &order[..keep] {
            logp[tok] -= norm;
        }
    }
    logp
}

/// Sampling distribution at `ctx` under `cfg`.
pub fn token_distribution(params: &PolicyParams, ctx: Context, cfg: &DecodeConfig) -> Vec<f64> {
    decode_log_distribution(&params.logits(ctx), cfg)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// One sampled response: answer tokens followed by a single score token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub query_id: usize,
    pub answer_tokens: Vec<usize>,
    pub score_token: usize,
    pub score_value: f64,
    /// Log-probability of every token (answers, then score) under the
    /// distribution it was sampled from.
    pub behavior_logprobs: Vec<f64>,
    pub rewards: Option<RewardBundle>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.answer_tokens.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Every (context, token) pair of the rollout in emission order.
    pub fn contexts(&self, shape: &PolicyShape) -> Result<Vec<(Context, usize)>> {
        let answer = shape.answer_index(&self.answer_tokens)?;
        if self.score_token >= shape.score_bins {
            return Err(Error::MalformedRollout(format!(
                "score token {} outside {} bins",
                self.score_token, shape.score_bins
            )));
        }
        let mut out: Vec<(Context, usize)> = self
            .answer_tokens
            .iter()
            .enumerate()
            .map(|(position, &tok)| {
                (
                    Context::Answer {
                        query: self.query_id,
                        position,
                    },
                    tok,
                )
            })
            .collect();
        out.push((
            Context::Score {
                query: self.query_id,
                answer,
            },
            self.score_token,
        ));
        Ok(out)
    }
}

/// The rollouts sharing one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub query_id: usize,
    pub rollouts: Vec<Rollout>,
}

fn sample_index<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &lp) in logp.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

fn sample_token<R: Rng + ?Sized>(
    params: &PolicyParams,
    ctx: Context,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> (usize, f64) {
    let logp = decode_log_distribution(&params.logits(ctx), cfg);
    let tok = sample_index(&logp, rng);
    (tok, logp[tok])
}

/// Samples the answer tokens, then the score conditioned on the answer.
pub fn sample_rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    query: &Query,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Rollout> {
    let shape = &params.shape;
    params.check_context(Context::Answer {
        query: query.id,
        position: 0,
    })?;
    let mut answer_tokens = Vec::with_capacity(shape.positions());
    let mut behavior_logprobs = Vec::with_capacity(shape.positions() + 1);
    for position in 0..shape.positions() {
        let (tok, lp) = sample_token(
            params,
            Context::Answer {
                query: query.id,
                position,
            },
            cfg,
            rng,
        );
        answer_tokens.push(tok);
        behavior_logprobs.push(lp);
    }
    let answer = shape.answer_index(&answer_tokens)?;
    let (score_token, lp) = sample_token(
        params,
        Context::Score {
            query: query.id,
            answer,
        },
        cfg,
        rng,
    );
    behavior_logprobs.push(lp);
    Ok(Rollout {
        query_id: query.id,
        answer_tokens,
        score_token,
        score_value: shape.score_value(score_token),
        behavior_logprobs,
        rewards: None,
    })
}

/// Re-samples only the score token of `answer_tokens` from `params`.
pub fn sample_score<R: Rng + ?Sized>(
    params: &PolicyParams,
    query_id: usize,
    answer_tokens: &[usize],
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<usize> {
    let answer = params.shape.answer_index(answer_tokens)?;
    let ctx = Context::Score {
        query: query_id,
        answer,
    };
    params.check_context(ctx)?;
    Ok(sample_token(params, ctx, cfg, rng).0)
}

/// Exact per-token log-probabilities under the untruncated `T = 1` policy.
pub fn logprob(params: &PolicyParams, rollout: &Rollout) -> Result<Vec<f64>> {
    rollout
        .contexts(&params.shape)?
        .into_iter()
        .map(|(ctx, tok)| {
            params.check_context(ctx)?;
            let vocab = params.shape.vocab(ctx);
            if tok >= vocab {
                return Err(Error::OutOfDomain(format!(
                    "token {tok} outside vocabulary {vocab}"
                )));
            }
            Ok(decode_log_distribution(&params.logits(ctx), &DecodeConfig::EXACT)[tok])
        })
        .collect()
}

const PARAMS_MAGIC: &str = "adpo-lab-params v1";

/// Writes parameters as text: a shape header followed by one value per
/// line with 17 significant digits, so a read-back is bit-exact.
///
/// ```text
/// adpo-lab-params v1
/// queries <Q>
/// answer_vocabs <V_0> [<V_1> ...]
/// score_bins <B>
/// values <N>
/// <answer tables, position-major, then query, then token>
/// <score table, query-major, then answer index, then bin>
/// <shared score slope>
/// ```
pub fn write_params<W: Write>(params: &PolicyParams, mut out: W) -> Result<()> {
    let s = &params.shape;
    writeln!(out, "{PARAMS_MAGIC}")?;
    writeln!(out, "queries {}", s.num_queries)?;
    let vocabs: Vec<String> = s.answer_vocabs.iter().map(usize::to_string).collect();
    writeln!(out, "answer_vocabs {}", vocabs.join(" "))?;
    writeln!(out, "score_bins {}", s.score_bins)?;
    writeln!(out, "values {}", s.len())?;
    for v in params.iter() {
        writeln!(out, "{v:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<PolicyParams> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse(format!("unexpected end of file before {what}")))?
            .map_err(Error::from)
    };
    let magic = next("header")?;
    if magic.trim() != PARAMS_MAGIC {
        return Err(Error::Parse(format!("bad header `{magic}`")));
    }
    fn field(line: &str, key: &str) -> Result<Vec<usize>> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Parse(format!("expected `{key}`, found `{line}`")));
        }
        parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("{key}: {e}")))
            })
            .collect()
    }
    let single = |v: Vec<usize>, key: &str| -> Result<usize> {
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::Parse(format!("`{key}` takes exactly one value"))),
        }
    };
    let num_queries = single(field(&next("queries")?, "queries")?, "queries")?;
    let answer_vocabs = field(&next("answer_vocabs")?, "answer_vocabs")?;
    let score_bins = single(field(&next("score_bins")?, "score_bins")?, "score_bins")?;
    let count = single(field(&next("values")?, "values")?, "values")?;
    if answer_vocabs.is_empty() || score_bins < 2 {
        return Err(Error::Parse("degenerate shape header".into()));
    }
    let shape = PolicyShape {
        num_queries,
        answer_vocabs,
        score_bins,
    };
    if count != shape.len() {
        return Err(Error::ShapeMismatch(format!(
            "header declares {count} values but shape needs {}",
            shape.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let line = next("value")?;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("value {k}: {e}")))?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("value {k}")));
        }
        values.push(v);
    }
    PolicyParams::from_flat(shape, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::tasks::{TaskKind, TaskSpec};

    fn task(kind: TaskKind, k: usize) -> Task {
        Task::new(TaskSpec {
            num_queries: 3,
            answer_vocab: k,
            ..TaskSpec::new(kind)
        })
        .unwrap()
    }

    #[test]
    fn uniform_init_is_flat() {
        let t = task(TaskKind::Discrete, 8);
        let p = init_params(&t, Init::Uniform).unwrap();
        let d = token_distribution(
            &p,
            Context::Answer {
                query: 1,
                position: 0,
            },
            &DecodeConfig::EXACT,
        );
        assert!(d.iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn pretrained_bias_solves_softmax() {
        let b = pretrained_bias(0.85, 8);
        assert!((b - (0.85f64 * 7.0 / 0.15).ln()).abs() < 1e-15);
        assert!((b - 3.680_511_204_443_419_6).abs() < 1e-12);
        assert_eq!(pretrained_bias(1.0 / 8.0, 8), 0.0);

        let t = task(TaskKind::Discrete, 8);
        let p = init_params(&t, Init::Pretrained { accuracy: 0.85 }).unwrap();
        for q in &t.queries {
            let tok = t.spec.reference_tokens(q)[0];
            let d = token_distribution(
                &p,
                Context::Answer {
                    query: q.id,
                    position: 0,
                },
                &DecodeConfig::EXACT,
            );
            assert!((d[tok] - 0.85).abs() < 1e-12);
        }
        let uniform = init_params(&t, Init::Uniform).unwrap();
        let same = init_params(&t, Init::Pretrained { accuracy: 0.125 }).unwrap();
        assert_eq!(uniform, same);
        assert!(init_params(&t, Init::Pretrained { accuracy: 1.0 }).is_err());
        assert!(init_params(&t, Init::Pretrained { accuracy: 0.0 }).is_err());
    }

    #[test]
    fn agent_pretrained_hits_joint_target() {
        let t = task(TaskKind::Agent, 16);
        let p = init_params(&t, Init::Pretrained { accuracy: 0.64 }).unwrap();
        let q = &t.queries[0];
        let toks = t.spec.reference_tokens(q);
        let joint: f64 = (0..2)
            .map(|pos| {
                token_distribution(
                    &p,
                    Context::Answer {
                        query: 0,
                        position: pos,
                    },
                    &DecodeConfig::EXACT,
                )[toks[pos]]
            })
            .product();
        assert!((joint - 0.64).abs() < 1e-12);
    }

    #[test]
    fn softmax_with_temperature_and_top_p() {
        let d: Vec<f64> = decode_log_distribution(&[2.0, 0.0], &DecodeConfig::EXACT)
            .into_iter()
            .map(f64::exp)
            .collect();
        assert!((d[0] - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert!((d[1] - 0.119_202_922_022_117_7).abs() < 1e-12);

        let cold = DecodeConfig {
            temperature: 1e-6,
            top_p: 1.0,
        };
        let d: Vec<f64> = decode_log_distribution(&[5.0, 0.0, 0.0], &cold)
            .into_iter()
            .map(f64::exp)
            .collect();
        assert!((d[0] - 1.0).abs() < 1e-9);

        // top-p keeps the smallest prefix reaching the mass, renormalized
        let logits = [1.0f64.ln(), 2.0f64.ln(), 7.0f64.ln()];
        let trunc = DecodeConfig {
            temperature: 1.0,
            top_p: 0.75,
        };
        let d: Vec<f64> = decode_log_distribution(&logits, &trunc)
            .into_iter()
            .map(f64::exp)
            .collect();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 2.0 / 9.0).abs() < 1e-12 && (d[2] - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn rollout_layout_and_score_value() {
        let t = Task::new(TaskSpec {
            num_queries: 2,
            score_bins: 11,
            ..TaskSpec::new(TaskKind::Agent)
        })
        .unwrap();
        let p = init_params(&t, Init::Uniform).unwrap();
        let mut rng = seeding::stream_rng(1, 0);
        let r = sample_rollout(&p, &t.queries[1], &DecodeConfig::ROLLOUT, &mut rng).unwrap();
        assert_eq!(r.answer_tokens.len(), 2);
        assert_eq!(r.behavior_logprobs.len(), 3);
        assert!(r
            .behavior_logprobs
            .iter()
            .all(|&l| l.is_finite() && l <= 0.0));
        assert_eq!(r.score_value, r.score_token as f64 / 10.0);
        assert_eq!(p.shape.score_value(7), 0.7);
    }

    #[test]
    fn sampling_is_seeded() {
        let t = task(TaskKind::Discrete, 8);
        let p = init_params(&t, Init::Pretrained { accuracy: 0.5 }).unwrap();
        let draw = |seed| {
            let mut rng = seeding::stream_rng(seed, 3);
            (0..20)
                .map(|_| {
                    sample_rollout(&p, &t.queries[0], &DecodeConfig::ROLLOUT, &mut rng).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let t = task(TaskKind::Discrete, 8);
        let p = init_params(&t, Init::Uniform).unwrap();
        let mut rng = seeding::stream_rng(11, 0);
        let mut counts = [0usize; 8];
        let n = 100_000;
        for _ in 0..n {
            let r = sample_rollout(&p, &t.queries[0], &DecodeConfig::EXACT, &mut rng).unwrap();
            counts[r.answer_tokens[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() < 0.01);
        }
    }

    #[test]
    fn behavior_logprobs_match_exact_density() {
        let t = task(TaskKind::Agent, 16);
        let mut p = init_params(&t, Init::Pretrained { accuracy: 0.6 }).unwrap();
        p.score_slope = 0.7;
        p.score_logits[5] = 1.3;
        let mut rng = seeding::stream_rng(2, 0);
        for q in &t.queries {
            let r = sample_rollout(&p, q, &DecodeConfig::EXACT, &mut rng).unwrap();
            assert_eq!(r.behavior_logprobs, logprob(&p, &r).unwrap());
        }
    }

    #[test]
    fn logprob_examples() {
        let t = task(TaskKind::Discrete, 8);
        let mut p = init_params(&t, Init::Uniform).unwrap();
        let r = Rollout {
            query_id: 0,
            answer_tokens: vec![3],
            score_token: 2,
            score_value: 0.2,
            behavior_logprobs: vec![0.0, 0.0],
            rewards: None,
        };
        let lp = logprob(&p, &r).unwrap();
        assert!((lp[0] + 8f64.ln()).abs() < 1e-12);
        assert!((lp[0] + 2.079_441_541_679_835_7).abs() < 1e-12);
        assert_eq!(logprob(&p.clone(), &r).unwrap(), lp);
        p.answer_logits[0][3] = 50.0;
        assert!(logprob(&p, &r).unwrap()[0] > -1e-12);
        let bad = Rollout {
            answer_tokens: vec![8],
            ..r
        };
        assert!(logprob(&p, &bad).is_err());
    }

    #[test]
    fn score_head_conditions_on_answer() {
        let t = task(TaskKind::Discrete, 8);
        let mut p = init_params(&t, Init::Uniform).unwrap();
        let off = p.score_offset(0, 2);
        p.score_logits[off + 10] = 3.0;
        let a = token_distribution(
            &p,
            Context::Score {
                query: 0,
                answer: 2,
            },
            &DecodeConfig::EXACT,
        );
        let b = token_distribution(
            &p,
            Context::Score {
                query: 0,
                answer: 3,
            },
            &DecodeConfig::EXACT,
        );
        assert!(a[10] > b[10]);
    }

    #[test]
    fn snapshot_is_independent() {
        let t = task(TaskKind::Discrete, 8);
        let mut p = init_params(&t, Init::Pretrained { accuracy: 0.7 }).unwrap();
        let snap = snapshot(&p);
        assert_eq!(snapshot(&snap), snap);
        p.answer_logits[0][0] += 1.0;
        p.score_slope = 2.0;
        assert_ne!(p, snap);
        assert_eq!(snap.score_slope, 0.0);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let t = task(TaskKind::Agent, 9);
        let mut p = init_params(&t, Init::Pretrained { accuracy: 0.3 }).unwrap();
        for (k, v) in p.iter_mut().enumerate() {
            *v += (k as f64 * 0.618_033_988_749_894_9).sin() * 1e-3 + 1.0 / 3.0;
        }
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let back = read_params(buf.as_slice()).unwrap();
        assert_eq!(back.shape, p.shape);
        for (a, b) in back.iter().zip(p.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(read_params(&b"garbage\n"[..]).is_err());
        let truncated = String::from_utf8(buf).unwrap();
        let cut: String = truncated
            .lines()
            .take(8)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(read_params(cut.as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn distributions_are_normalized(
                logits in prop::collection::vec(-20.0f64..20.0, 2..12),
                t in 0.01f64..5.0,
                top_p in 0.05f64..=1.0,
            ) {
                let d: Vec<f64> = decode_log_distribution(&logits, &DecodeConfig { temperature: t, top_p })
                    .into_iter().map(f64::exp).collect();
                prop_assert!(d.iter().all(|&x| x >= 0.0));
                prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
