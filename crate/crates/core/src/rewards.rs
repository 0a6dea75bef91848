//! Answer rewards, the thresholded binary verification reward, contrastive
//! sets and the pairwise preference verification reward.
//!
//! All inequalities are strict: a score tie, a zero threshold product or a
//! quality difference equal to the margin earns nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Group;
use crate::tasks::{DecodedAnswer, GroundTruth, Task, TaskKind};

/// Thresholds for the binary reward and the continuous contrastive margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub tau_s: f64,
    pub tau_a: f64,
    pub gamma: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_s: 0.5,
            tau_a: 0.5,
            gamma: 0.1,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_s", self.tau_s), ("tau_a", self.tau_a)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::OutOfDomain(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if !(self.gamma > 0.0) {
            return Err(Error::OutOfDomain(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Which verification reward accompanies the answer reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMode {
    None,
    Binary,
    Preference,
}

/// Rewards for one rollout. Exactly one of `binary`/`preference` is set in
/// the corresponding mode; both are absent in `None` mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub answer: f64,
    pub binary: Option<f64>,
    pub preference: Option<f64>,
}

impl RewardBundle {
    /// The populated verification reward, or 0 when none is configured.
    pub fn verification(&self) -> f64 {
        self.binary.or(self.preference).unwrap_or(0.0)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfDomain(format!(
            "{name} must lie in [0, 1], got {v}"
        )))
    }
}

pub fn answer_reward_discrete(predicted: &DecodedAnswer, truth: &GroundTruth) -> Result<f64> {
    match (predicted, truth) {
        (DecodedAnswer::Discrete(p), GroundTruth::Discrete(t)) => {
            Ok(if p == t { 1.0 } else { 0.0 })
        }
        _ => Err(Error::KindMismatch {
            expected: predicted.kind().name(),
            found: truth.kind().name(),
        }),
    }
}

/// Intersection-over-union of two closed intervals.
pub fn interval_iou(predicted: (f64, f64), truth: (f64, f64)) -> Result<f64> {
    for (name, (lo, hi)) in [("predicted", predicted), ("truth", truth)] {
        check_unit(name, lo)?;
        check_unit(name, hi)?;
        if lo > hi {
            return Err(Error::OutOfDomain(format!(
                "{name} interval is inverted: [{lo}, {hi}]"
            )));
        }
    }
    let inter = (predicted.1.min(truth.1) - predicted.0.max(truth.0)).max(0.0);
    let union = (predicted.1 - predicted.0) + (truth.1 - truth.0) - inter;
    if union <= 0.0 {
        // two degenerate points
        return Ok(if predicted == truth { 1.0 } else { 0.0 });
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Click radius on the unit square: 0.14 of its diagonal.
pub const CLICK_RADIUS: f64 = 0.14 * std::f64::consts::SQRT_2;

/// Type match earns half, a click within [`CLICK_RADIUS`] the other half.
pub fn answer_reward_agent(predicted: (usize, f64, f64), truth: (usize, f64, f64)) -> Result<f64> {
    for v in [predicted.1, predicted.2, truth.1, truth.2] {
        check_unit("coordinate", v)?;
    }
    if predicted.0 != truth.0 {
        return Ok(0.0);
    }
    let dist = (predicted.1 - truth.1).hypot(predicted.2 - truth.2);
    Ok(if dist < CLICK_RADIUS { 1.0 } else { 0.5 })
}

/// Dispatches to the answer reward of the answer's kind.
pub fn answer_reward(predicted: &DecodedAnswer, truth: &GroundTruth) -> Result<f64> {
    match (predicted, truth) {
        (DecodedAnswer::Discrete(_), _) => answer_reward_discrete(predicted, truth),
        (DecodedAnswer::Interval { lo, hi, .. }, GroundTruth::Interval { lo: tl, hi: th }) => {
            interval_iou((*lo, *hi), (*tl, *th))
        }
        (
            DecodedAnswer::Agent {
                action_type, x, y, ..
            },
            GroundTruth::Agent {
                action_type: tt,
                x: tx,
                y: ty,
            },
        ) => answer_reward_agent((*action_type, *x, *y), (*tt, *tx, *ty)),
        _ => Err(Error::KindMismatch {
            expected: predicted.kind().name(),
            found: truth.kind().name(),
        }),
    }
}

/// Success criterion shared by training metrics and evaluation: exact match
/// for discrete, IoU above one half for intervals, a fully grounded action
/// for agents.
pub fn is_success(kind: TaskKind, answer_reward: f64) -> bool {
    match kind {
        TaskKind::Discrete | TaskKind::Agent => answer_reward >= 1.0,
        TaskKind::Interval => answer_reward > 0.5,
    }
}

pub fn binary_verification_reward(score: f64, answer_reward: f64, th: &Thresholds) -> Result<f64> {
    check_unit("score", score)?;
    check_unit("answer reward", answer_reward)?;
    Ok(if (score - th.tau_s) * (answer_reward - th.tau_a) > 0.0 {
        1.0
    } else {
        0.0
    })
}

/// How contrastive sets are formed from answer rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContrastiveRule {
    /// Every sample whose reward differs.
    Exact,
    /// Every sample whose reward differs by more than the margin.
    Margin(f64),
}

impl ContrastiveRule {
    pub fn for_kind(kind: TaskKind, th: &Thresholds) -> Self {
        if kind.is_continuous() {
            ContrastiveRule::Margin(th.gamma)
        } else {
            ContrastiveRule::Exact
        }
    }

    pub fn set(&self, answer_rewards: &[f64], i: usize) -> Result<Vec<usize>> {
        match *self {
            ContrastiveRule::Exact => contrastive_set_discrete(answer_rewards, i),
            ContrastiveRule::Margin(gamma) => contrastive_set_continuous(answer_rewards, i, gamma),
        }
    }
}

fn check_index(i: usize, len: usize) -> Result<()> {
    if i < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index: i, len })
    }
}

pub fn contrastive_set_discrete(answer_rewards: &[f64], i: usize) -> Result<Vec<usize>> {
    check_index(i, answer_rewards.len())?;
    let ri = answer_rewards[i];
    Ok((0..answer_rewards.len())
        .filter(|&j| answer_rewards[j] != ri)
        .collect())
}

pub fn contrastive_set_continuous(
    answer_rewards: &[f64],
    i: usize,
    gamma: f64,
) -> Result<Vec<usize>> {
    if !(gamma > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    check_index(i, answer_rewards.len())?;
    let ri = answer_rewards[i];
    Ok((0..answer_rewards.len())
        .filter(|&j| (answer_rewards[j] - ri).abs() > gamma)
        .collect())
}

/// Fraction of contrastive partners whose score ordering agrees with the
/// answer-quality ordering; zero for an empty set.
pub fn preference_verification_reward(
    scores: &[f64],
    answer_rewards: &[f64],
    i: usize,
    contrastive: &[usize],
) -> Result<f64> {
    if scores.len() != answer_rewards.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: answer_rewards.len(),
        });
    }
    check_index(i, scores.len())?;
    let mut agree = 0usize;
    for &j in contrastive {
        check_index(j, scores.len())?;
        if (scores[i] - scores[j]) * (answer_rewards[i] - answer_rewards[j]) > 0.0 {
            agree += 1;
        }
    }
    Ok(agree as f64 / contrastive.len().max(1) as f64)
}

/// Preference rewards for a whole group.
pub fn preference_rewards(
    scores: &[f64],
    answer_rewards: &[f64],
    rule: ContrastiveRule,
) -> Result<Vec<f64>> {
    (0..answer_rewards.len())
        .map(|i| {
            let set = rule.set(answer_rewards, i)?;
            preference_verification_reward(scores, answer_rewards, i, &set)
        })
        .collect()
}

/// Computes reward bundles for every rollout of `group`.
pub fn group_rewards(
    task: &Task,
    group: &Group,
    mode: VerificationMode,
    th: &Thresholds,
) -> Result<Vec<RewardBundle>> {
    let query = task.query(group.query_id)?;
    let answers = group
        .rollouts
        .iter()
        .map(|r| {
            let decoded = task.decode_answer(query, &r.answer_tokens)?;
            answer_reward(&decoded, &query.truth)
        })
        .collect::<Result<Vec<f64>>>()?;
    let scores: Vec<f64> = group.rollouts.iter().map(|r| r.score_value).collect();

    let verification: Vec<Option<f64>> = match mode {
        VerificationMode::None => vec![None; answers.len()],
        VerificationMode::Binary => scores
            .iter()
            .zip(&answers)
            .map(|(&s, &ra)| binary_verification_reward(s, ra, th).map(Some))
            .collect::<Result<_>>()?,
        VerificationMode::Preference => {
            let rule = ContrastiveRule::for_kind(task.kind(), th);
            preference_rewards(&scores, &answers, rule)?
                .into_iter()
                .map(Some)
                .collect()
        }
    };

    Ok(answers
        .into_iter()
        .zip(verification)
        .map(|(answer, v)| RewardBundle {
            answer,
            binary: if mode == VerificationMode::Binary {
                v
            } else {
                None
            },
            preference: if mode == VerificationMode::Preference {
                v
            } else {
                None
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Rollout;
    use crate::tasks::{TaskKind, TaskSpec};

    const TH: Thresholds = Thresholds {
        tau_s: 0.5,
        tau_a: 0.5,
        gamma: 0.1,
    };

    #[test]
    fn discrete_match() {
        let r = |p, t| {
            answer_reward_discrete(&DecodedAnswer::Discrete(p), &GroundTruth::Discrete(t)).unwrap()
        };
        assert_eq!(r(5, 5), 1.0);
        assert_eq!(r(4, 5), 0.0);
        assert_eq!(r(0, 0), 1.0);
        assert!(answer_reward_discrete(
            &DecodedAnswer::Discrete(0),
            &GroundTruth::Interval { lo: 0.0, hi: 0.1 }
        )
        .is_err());
    }

    #[test]
    fn interval_iou_examples() {
        assert!((interval_iou((0.2, 0.4), (0.3, 0.5)).unwrap() - 0.1 / 0.3).abs() < 1e-12);
        assert_eq!(interval_iou((0.2, 0.4), (0.2, 0.4)).unwrap(), 1.0);
        assert_eq!(interval_iou((0.0, 0.1), (0.5, 0.6)).unwrap(), 0.0);
        assert_eq!(interval_iou((0.3, 0.3), (0.3, 0.3)).unwrap(), 1.0);
        assert!(interval_iou((0.4, 0.2), (0.2, 0.4)).is_err());
    }

    #[test]
    fn agent_rule() {
        assert_eq!(
            answer_reward_agent((1, 0.3, 0.3), (1, 0.3, 0.3)).unwrap(),
            1.0
        );
        assert_eq!(
            answer_reward_agent((0, 0.3, 0.3), (1, 0.3, 0.3)).unwrap(),
            0.0
        );
        assert!((CLICK_RADIUS - 0.197_989_898_732_233_3).abs() < 1e-12);
        assert_eq!(
            answer_reward_agent((2, 0.0, 0.0), (2, 0.2, 0.0)).unwrap(),
            0.5
        );
        assert_eq!(
            answer_reward_agent((2, 0.0, 0.0), (2, 0.19, 0.0)).unwrap(),
            1.0
        );
        assert!(answer_reward_agent((2, 1.2, 0.0), (2, 0.2, 0.0)).is_err());
    }

    #[test]
    fn binary_reward_strict() {
        assert_eq!(binary_verification_reward(0.9, 1.0, &TH).unwrap(), 1.0);
        assert_eq!(binary_verification_reward(0.9, 0.0, &TH).unwrap(), 0.0);
        assert_eq!(binary_verification_reward(0.1, 0.0, &TH).unwrap(), 1.0);
        for ra in [0.0, 0.3, 1.0] {
            assert_eq!(binary_verification_reward(0.5, ra, &TH).unwrap(), 0.0);
        }
        assert!(binary_verification_reward(1.5, 1.0, &TH).is_err());
    }

    #[test]
    fn discrete_contrastive_sets() {
        assert_eq!(
            contrastive_set_discrete(&[1.0, 1.0, 0.0, 0.0], 0).unwrap(),
            vec![2, 3]
        );
        assert!(contrastive_set_discrete(&[1.0; 4], 2).unwrap().is_empty());
        assert_eq!(contrastive_set_discrete(&[0.0, 1.0], 1).unwrap(), vec![0]);
        assert!(contrastive_set_discrete(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn margin_contrastive_sets() {
        let ra = [0.9, 0.85, 0.5];
        assert_eq!(contrastive_set_continuous(&ra, 0, 0.1).unwrap(), vec![2]);
        assert_eq!(contrastive_set_continuous(&ra, 2, 0.1).unwrap(), vec![0, 1]);
        for i in 0..3 {
            assert!(contrastive_set_continuous(&ra, i, 1.0).unwrap().is_empty());
        }
        assert!(contrastive_set_continuous(&ra, 0, 0.0).is_err());
        assert!(contrastive_set_continuous(&ra, 0, -0.1).is_err());
    }

    #[test]
    fn preference_reward_examples() {
        let s = [0.8, 0.3, 0.5, 0.1];
        let ra = [1.0, 1.0, 0.0, 0.0];
        let got = preference_rewards(&s, &ra, ContrastiveRule::Exact).unwrap();
        assert_eq!(got, vec![1.0, 0.5, 0.5, 1.0]);
        assert_eq!(
            preference_rewards(&s, &[1.0; 4], ContrastiveRule::Exact).unwrap(),
            vec![0.0; 4]
        );
        // tied scores earn nothing
        assert_eq!(
            preference_rewards(&[0.5, 0.5], &[1.0, 0.0], ContrastiveRule::Exact).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(preference_verification_reward(&[0.1], &[0.0, 1.0], 0, &[1]).is_err());
    }

    fn group_of(
        kind: TaskKind,
        scores_and_tokens: &[(usize, usize)],
        truth_token: usize,
    ) -> (Task, Group) {
        let mut task = Task::new(TaskSpec {
            num_queries: 1,
            ..TaskSpec::new(kind)
        })
        .unwrap();
        task.queries[0].truth = GroundTruth::Discrete(truth_token);
        let b = task.spec.score_bins;
        let rollouts = scores_and_tokens
            .iter()
            .map(|&(tok, bin)| Rollout {
                query_id: 0,
                answer_tokens: vec![tok],
                score_token: bin,
                score_value: bin as f64 / (b - 1) as f64,
                behavior_logprobs: vec![-1.0, -1.0],
                rewards: None,
            })
            .collect();
        (
            task,
            Group {
                query_id: 0,
                rollouts,
            },
        )
    }

    #[test]
    fn group_rewards_modes() {
        let (task, singleton) = group_of(TaskKind::Discrete, &[(3, 9)], 3);
        let r = group_rewards(&task, &singleton, VerificationMode::Preference, &TH).unwrap();
        assert_eq!(r[0].preference, Some(0.0));

        // R^a = [1, 0], s = [0.9, 0.1]
        let (task, g) = group_of(TaskKind::Discrete, &[(3, 9), (2, 1)], 3);
        let pref = group_rewards(&task, &g, VerificationMode::Preference, &TH).unwrap();
        assert_eq!(
            pref.iter().map(|b| b.answer).collect::<Vec<_>>(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            pref.iter()
                .map(|b| b.preference.unwrap())
                .collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
        assert!(pref.iter().all(|b| b.binary.is_none()));
        let bin = group_rewards(&task, &g, VerificationMode::Binary, &TH).unwrap();
        assert_eq!(
            bin.iter().map(|b| b.binary.unwrap()).collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
        assert!(bin.iter().all(|b| b.preference.is_none()));
        let none = group_rewards(&task, &g, VerificationMode::None, &TH).unwrap();
        assert!(none
            .iter()
            .all(|b| b.binary.is_none() && b.preference.is_none()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn brute(scores: &[f64], ra: &[f64], gamma: Option<f64>) -> Vec<f64> {
            let g = ra.len();
            (0..g)
                .map(|i| {
                    let mut n = 0usize;
                    let mut hit = 0usize;
                    for j in 0..g {
                        let member = match gamma {
                            None => ra[j] != ra[i],
                            Some(m) => (ra[j] - ra[i]).abs() > m,
                        };
                        if member {
                            n += 1;
                            let ds = scores[i] - scores[j];
                            let dr = ra[i] - ra[j];
                            if (ds > 0.0 && dr > 0.0) || (ds < 0.0 && dr < 0.0) {
                                hit += 1;
                            }
                        }
                    }
                    if n == 0 {
                        0.0
                    } else {
                        hit as f64 / n as f64
                    }
                })
                .collect()
        }

        proptest! {
            #[test]
            fn matches_pairwise_enumeration(
                pairs in prop::collection::vec((0usize..11, 0usize..5), 1..16),
                gamma in 0.01f64..0.6,
            ) {
                let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
                let cont: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 4.0).collect();
                let disc: Vec<f64> = pairs.iter().map(|p| (p.1 % 2) as f64).collect();
                prop_assert_eq!(preference_rewards(&scores, &disc, ContrastiveRule::Exact).unwrap(), brute(&scores, &disc, None));
                prop_assert_eq!(preference_rewards(&scores, &cont, ContrastiveRule::Margin(gamma)).unwrap(), brute(&scores, &cont, Some(gamma)));
            }

            #[test]
            fn rewards_stay_in_unit_range(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..16)) {
                let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let ra: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                for r in preference_rewards(&s, &ra, ContrastiveRule::Margin(0.1)).unwrap() {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
                for (&si, &ri) in s.iter().zip(&ra) {
                    let b = binary_verification_reward(si, ri, &TH).unwrap();
                    prop_assert!(b == 0.0 || b == 1.0);
                }
            }

            #[test]
            fn two_sample_symmetry(s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0, r2 in 0.0f64..0.99, bump in 0.001f64..1.0) {
                let r1 = (r2 + bump).min(1.0);
                prop_assume!(r1 > r2);
                let r = preference_rewards(&[s1, s2], &[r1, r2], ContrastiveRule::Exact).unwrap();
                prop_assert_eq!(r[0] == 1.0, s1 > s2);
                prop_assert_eq!(r[1] == 1.0, s1 > s2);
            }

            #[test]
            fn homogeneous_groups_earn_nothing(s in prop::collection::vec(0.0f64..=1.0, 1..12), base in 0.0f64..0.9) {
                let ra: Vec<f64> = s.iter().enumerate().map(|(k, _)| base + 0.1 * (k % 2) as f64 * 0.999).collect();
                prop_assert!(preference_rewards(&s, &ra, ContrastiveRule::Margin(0.1)).unwrap().iter().all(|&r| r == 0.0));
                let same = vec![base; s.len()];
                prop_assert!(preference_rewards(&s, &same, ContrastiveRule::Exact).unwrap().iter().all(|&r| r == 0.0));
            }

            #[test]
            fn raising_the_best_score_never_hurts(
                s in prop::collection::vec(0.0f64..=1.0, 2..10),
                ra in prop::collection::vec(0.0f64..=0.9, 2..10),
                lift in 0.0f64..1.0,
            ) {
                let g = s.len().min(ra.len());
                let (s, mut ra) = (s[..g].to_vec(), ra[..g].to_vec());
                ra[0] = 1.0;
                let before = preference_rewards(&s, &ra, ContrastiveRule::Exact).unwrap()[0];
                let mut lifted = s.clone();
                lifted[0] = (s[0] + lift).min(1.0);
                let after = preference_rewards(&lifted, &ra, ContrastiveRule::Exact).unwrap()[0];
                prop_assert!(after >= before);
            }
        }
    }
}
