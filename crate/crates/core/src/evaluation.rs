//! Inference-time selection and verification metrics.
//!
//! For every query `N` candidates are sampled at evaluation decoding. From
//! the same pool we report pass@1 (mean single-sample success), major@N
//! (modal answer) and best@N (highest verification score, first index on
//! ties), plus AUC and AP over all pooled (score, success) pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sample_rollout, sample_score, DecodeConfig, PolicyParams};
use crate::rewards::{answer_reward, is_success};
use crate::seeding;
use crate::tasks::Task;

/// Highest score wins; ties go to the lowest index.
pub fn best_of_n(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Modal answer encoding; ties go to the smallest encoding.
pub fn majority_vote(answers: &[usize]) -> Result<usize> {
    if answers.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let mut sorted = answers.to_vec();
    sorted.sort_unstable();
    let (mut best, mut best_count) = (sorted[0], 0);
    let mut k = 0;
    while k < sorted.len() {
        let v = sorted[k];
        let run = sorted[k..].iter().take_while(|&&x| x == v).count();
        if run > best_count {
            best = v;
            best_count = run;
        }
        k += run;
    }
    Ok(best)
}

/// ROC-AUC as the Mann-Whitney statistic, ties counting one half. Absent
/// unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let run = order[k..].iter().take_while(|&&i| scores[i] == s).count();
        let run_pos = order[k..k + run].iter().filter(|&&i| labels[i]).count() as u128;
        let run_neg = run as u128 - run_pos;
        twice_u += 2 * run_pos * neg_below + run_pos * run_neg;
        neg_below += run_neg;
        k += run;
    }
    Some(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Mean precision at the rank of each positive, ranking by descending score
/// with ties kept in input order. Absent without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Pass1,
    Majority,
    BestOfN,
    CrossVerifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n: usize,
    pub protocol: Protocol,
    pub decode: DecodeConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 8,
            protocol: Protocol::BestOfN,
            decode: DecodeConfig::EVAL,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("eval.n", "must be >= 1"));
        }
        self.decode
            .validate()
            .map_err(|e| Error::config("eval.decode", e.to_string()))
    }

    /// Sample count after protocol constraints (pass@1 uses one sample).
    pub fn effective_n(&self) -> usize {
        if self.protocol == Protocol::Pass1 {
            1
        } else {
            self.n
        }
    }
}

/// Where verification scores come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    /// The generator's own score token.
    SelfScore,
    /// Another policy's score head, evaluated on the generator's answers.
    Verifier(&'a PolicyParams),
    /// The answer reward itself.
    Oracle,
    /// One minus the answer reward.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub answer_tokens: Vec<usize>,
    pub vote_key: usize,
    pub score_bin: usize,
    pub score: f64,
    pub answer_reward: f64,
    pub success: bool,
}

/// Samples `n` candidates per query. Query `q` always uses RNG stream `q`,
/// so a pool of size `n` is a prefix of the pool of any larger size.
pub fn sample_pools(
    params: &PolicyParams,
    task: &Task,
    n: usize,
    decode: &DecodeConfig,
    seed: u64,
    source: ScoreSource<'_>,
) -> Result<Vec<Vec<Candidate>>> {
    if n == 0 {
        return Err(Error::Empty("candidate pool"));
    }
    let bins = task.spec.score_bins;
    let verifier_seed = seeding::derive(seed, 0x7665_7269);
    task.queries
        .par_iter()
        .map(|query| {
            let mut rng = seeding::stream_rng(seed, query.id as u64);
            let mut verifier_rng = seeding::stream_rng(verifier_seed, query.id as u64);
            (0..n)
                .map(|_| {
                    let r = sample_rollout(params, query, decode, &mut rng)?;
                    let decoded = task.decode_answer(query, &r.answer_tokens)?;
                    let ra = answer_reward(&decoded, &query.truth)?;
                    let (score_bin, score) = match source {
                        ScoreSource::SelfScore => (r.score_token, r.score_value),
                        ScoreSource::Verifier(v) => {
                            let bin = sample_score(
                                v,
                                query.id,
                                &r.answer_tokens,
                                decode,
                                &mut verifier_rng,
                            )?;
                            (bin, v.shape.score_value(bin))
                        }
                        ScoreSource::Oracle => (bin_of(ra, bins), ra),
                        ScoreSource::Adversarial => (bin_of(1.0 - ra, bins), 1.0 - ra),
                    };
                    Ok(Candidate {
                        vote_key: task.spec.vote_key(&r.answer_tokens)?,
                        answer_tokens: r.answer_tokens,
                        score_bin,
                        score,
                        answer_reward: ra,
                        success: is_success(task.kind(), ra),
                    })
                })
                .collect()
        })
        .collect()
}

fn bin_of(score: f64, bins: usize) -> usize {
    ((score * (bins - 1) as f64).round() as usize).min(bins - 1)
}

/// Accuracy and mean answer reward (mean IoU for intervals) of one protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolScore {
    pub accuracy: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolScores {
    pub pass_at_1: ProtocolScore,
    pub majority: ProtocolScore,
    pub best_of_n: ProtocolScore,
}

/// Protocol scores using the first `n` candidates of every pool.
pub fn score_pools(pools: &[Vec<Candidate>], n: usize) -> Result<PoolScores> {
    if pools.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let mut acc = [0.0f64; 3];
    let mut reward = [0.0f64; 3];
    for pool in pools {
        let pool = &pool[..n.min(pool.len())];
        if pool.is_empty() {
            return Err(Error::Empty("candidate pool"));
        }
        let m = pool.len() as f64;
        acc[0] += pool.iter().filter(|c| c.success).count() as f64 / m;
        reward[0] += pool.iter().map(|c| c.answer_reward).sum::<f64>() / m;

        let keys: Vec<usize> = pool.iter().map(|c| c.vote_key).collect();
        let voted = majority_vote(&keys)?;
        let pick = pool
            .iter()
            .find(|c| c.vote_key == voted)
            .expect("voted key is in the pool");
        acc[1] += f64::from(u8::from(pick.success));
        reward[1] += pick.answer_reward;

        let scores: Vec<f64> = pool.iter().map(|c| c.score).collect();
        let best = &pool[best_of_n(&scores)?];
        acc[2] += f64::from(u8::from(best.success));
        reward[2] += best.answer_reward;
    }
    let q = pools.len() as f64;
    let at = |k: usize| ProtocolScore {
        accuracy: acc[k] / q,
        mean_reward: reward[k] / q,
    };
    Ok(PoolScores {
        pass_at_1: at(0),
        majority: at(1),
        best_of_n: at(2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub n: usize,
    pub num_queries: usize,
    pub pass_at_1: ProtocolScore,
    pub majority: ProtocolScore,
    pub best_of_n: ProtocolScore,
    /// Accuracy under the configured protocol.
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub score_histogram: Vec<u64>,
}

impl EvalReport {
    /// Distinct score bins with at least one sample.
    pub fn nonempty_bins(&self) -> usize {
        self.score_histogram.iter().filter(|&&c| c > 0).count()
    }
}

pub fn report_from_pools(
    pools: &[Vec<Candidate>],
    protocol: Protocol,
    n: usize,
    bins: usize,
) -> Result<EvalReport> {
    let scores = score_pools(pools, n)?;
    let used: Vec<&Candidate> = pools.iter().flat_map(|p| p.iter().take(n)).collect();
    let s: Vec<f64> = used.iter().map(|c| c.score).collect();
    let l: Vec<bool> = used.iter().map(|c| c.success).collect();
    let mut histogram = vec![0u64; bins];
    for c in &used {
        histogram[c.score_bin.min(bins - 1)] += 1;
    }
    let accuracy = match protocol {
        Protocol::Pass1 => scores.pass_at_1.accuracy,
        Protocol::Majority => scores.majority.accuracy,
        Protocol::BestOfN | Protocol::CrossVerifier => scores.best_of_n.accuracy,
    };
    Ok(EvalReport {
        protocol,
        n,
        num_queries: pools.len(),
        pass_at_1: scores.pass_at_1,
        majority: scores.majority,
        best_of_n: scores.best_of_n,
        accuracy,
        auc: auc(&s, &l),
        ap: average_precision(&s, &l),
        score_histogram: histogram,
    })
}

/// Evaluates `params` on every query. `verifier` is required for the
/// cross-verifier protocol and ignored otherwise.
pub fn evaluate(
    params: &PolicyParams,
    cfg: &EvalConfig,
    task: &Task,
    verifier: Option<&PolicyParams>,
) -> Result<EvalReport> {
    let source = match (cfg.protocol, verifier) {
        (Protocol::CrossVerifier, Some(v)) => ScoreSource::Verifier(v),
        (Protocol::CrossVerifier, None) => {
            return Err(Error::config(
                "eval.protocol",
                "cross_verifier requires verifier parameters",
            ))
        }
        _ => ScoreSource::SelfScore,
    };
    evaluate_with(params, cfg, task, source)
}

pub fn evaluate_with(
    params: &PolicyParams,
    cfg: &EvalConfig,
    task: &Task,
    source: ScoreSource<'_>,
) -> Result<EvalReport> {
    cfg.validate()?;
    if params.shape != crate::policy::PolicyShape::for_task(&task.spec) {
        return Err(Error::ShapeMismatch(
            "parameters do not match the task".into(),
        ));
    }
    if let ScoreSource::Verifier(v) = source {
        if v.shape != params.shape {
            return Err(Error::ShapeMismatch(
                "verifier does not match the task".into(),
            ));
        }
    }
    let n = cfg.effective_n();
    let pools = sample_pools(params, task, n, &cfg.decode, cfg.seed, source)?;
    report_from_pools(&pools, cfg.protocol, n, task.spec.score_bins)
}
