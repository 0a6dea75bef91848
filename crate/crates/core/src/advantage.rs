//! Group-normalized advantages, entangled and decoupled, and the token
//! masks that route them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Group, Rollout};
use crate::rewards::RewardBundle;

/// Groups whose population std falls below this get zero advantage.
pub const STD_GUARD: f64 = 1e-8;

/// `(R_i - mean) / std` with the population (divide-by-G) std.
pub fn group_normalize(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Empty("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|&r| r - mean).collect();
    // second pass removes the rounding left in the mean
    let shift = centered.iter().sum::<f64>() / n;
    let centered: Vec<f64> = centered.iter().map(|&c| c - shift).collect();
    let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    if !(std >= STD_GUARD) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(centered.iter().map(|&c| c / std).collect())
}

/// Disjoint masks over a rollout's tokens: answer tokens, then the score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMasks {
    pub answer: Vec<bool>,
    pub score: Vec<bool>,
}

impl TokenMasks {
    pub fn len(&self) -> usize {
        self.answer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answer.is_empty()
    }
}

pub fn token_masks(rollout: &Rollout) -> Result<TokenMasks> {
    let n_answer = rollout.answer_tokens.len();
    if n_answer == 0 {
        return Err(Error::MalformedRollout(
            "rollout has no answer tokens".into(),
        ));
    }
    if rollout.behavior_logprobs.len() != n_answer + 1 {
        return Err(Error::MalformedRollout(format!(
            "expected {} token log-probabilities (answers + one score token), got {}",
            n_answer + 1,
            rollout.behavior_logprobs.len()
        )));
    }
    let mut answer = vec![true; n_answer + 1];
    answer[n_answer] = false;
    let score = answer.iter().map(|a| !a).collect();
    Ok(TokenMasks { answer, score })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    Decoupled,
    Entangled,
}

/// Advantages for one rollout. In entangled mode `answer == preference`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub answer: f64,
    pub preference: f64,
    pub per_token: Vec<f64>,
}

fn rewards_of(group: &Group) -> Result<Vec<RewardBundle>> {
    group
        .rollouts
        .iter()
        .enumerate()
        .map(|(i, r)| r.rewards.ok_or(Error::MissingRewards(i)))
        .collect()
}

fn broadcast(rollout: &Rollout, answer: f64, preference: f64) -> Result<AdvantageSet> {
    let masks = token_masks(rollout)?;
    let per_token = masks
        .answer
        .iter()
        .zip(&masks.score)
        .map(|(&a, &s)| {
            if a {
                answer
            } else if s {
                preference
            } else {
                0.0
            }
        })
        .collect();
    Ok(AdvantageSet {
        answer,
        preference,
        per_token,
    })
}

/// Separate normalizations of answer and verification rewards, routed to
/// answer and score tokens respectively.
pub fn decoupled_advantages(group: &Group) -> Result<Vec<AdvantageSet>> {
    let rewards = rewards_of(group)?;
    let answer = group_normalize(&rewards.iter().map(|r| r.answer).collect::<Vec<_>>())?;
    let pref = group_normalize(
        &rewards
            .iter()
            .map(RewardBundle::verification)
            .collect::<Vec<_>>(),
    )?;
    group
        .rollouts
        .iter()
        .zip(answer.iter().zip(&pref))
        .map(|(r, (&a, &p))| broadcast(r, a, p))
        .collect()
}

/// One normalization of the summed reward, applied to every token.
pub fn entangled_advantage(group: &Group) -> Result<Vec<f64>> {
    let rewards = rewards_of(group)?;
    group_normalize(
        &rewards
            .iter()
            .map(|r| r.answer + r.verification())
            .collect::<Vec<_>>(),
    )
}

pub fn group_advantages(group: &Group, mode: AdvantageMode) -> Result<Vec<AdvantageSet>> {
    match mode {
        AdvantageMode::Decoupled => decoupled_advantages(group),
        AdvantageMode::Entangled => entangled_advantage(group)?
            .into_iter()
            .zip(&group.rollouts)
            .map(|(a, r)| broadcast(r, a, a))
            .collect(),
    }
}
