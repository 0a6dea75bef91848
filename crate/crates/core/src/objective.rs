//! Clipped surrogate objective with exact KL regularization, in masked
//! (decoupled) and aggregated (entangled) form, and its analytic gradient.
//!
//! For a batch of `N` rollouts:
//!
//! ```text
//! J = 1/N sum_i 1/|o_i| sum_t [ min(r A, clip(r, 1-eps, 1+eps) A) - beta KL_t ]
//! ```
//!
//! where `A` is `A_answer` on answer tokens and `A_pref` on the score token
//! in decoupled mode, or the aggregated advantage on every token in
//! entangled mode, and `r = exp(logp_new - logp_behavior)`. `KL_t` is the
//! full-vocabulary divergence from the reference policy at token `t`'s
//! context and is applied to every token without masking.

use serde::{Deserialize, Serialize};

use crate::advantage::{token_masks, AdvantageMode, AdvantageSet};
use crate::error::{Error, Result};
use crate::policy::{log_softmax, Context, Group, PolicyParams};
use crate::rewards::VerificationMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub clip_eps: f64,
    pub kl_coeff: f64,
    pub advantage: AdvantageMode,
    pub verification: VerificationMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            clip_eps: 0.2,
            kl_coeff: 0.01,
            advantage: AdvantageMode::Decoupled,
            verification: VerificationMode::Preference,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::OutOfDomain(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_coeff >= 0.0) || !self.kl_coeff.is_finite() {
            return Err(Error::OutOfDomain(format!(
                "kl_coeff must be >= 0, got {}",
                self.kl_coeff
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub surrogate: f64,
    pub kl: f64,
    pub total: f64,
    /// Likelihood ratios in (group, rollout, token) order.
    pub ratios: Vec<f64>,
}

pub fn clipped_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Whether the min selects the clipped branch with a flat derivative.
pub fn clip_active(ratio: f64, adv: f64, eps: f64) -> bool {
    (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps)
}

/// `KL(softmax(p) || softmax(q))` and its gradient in the logits of `p`.
fn kl_with_gradient(p_logits: &[f64], q_logits: &[f64]) -> (f64, Vec<f64>) {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let kl = p
        .iter()
        .zip(lp.iter().zip(&lq))
        .map(|(&pk, (&a, &b))| pk * (a - b))
        .sum::<f64>()
        .max(0.0);
    let grad = p
        .iter()
        .zip(lp.iter().zip(&lq))
        .map(|(&pk, (&a, &b))| pk * (a - b - kl))
        .collect();
    (kl, grad)
}

/// Exact KL from the reference policy at one context (`T = 1`, untruncated).
pub fn kl_token(params: &PolicyParams, reference: &PolicyParams, ctx: Context) -> f64 {
    kl_with_gradient(&params.logits(ctx), &reference.logits(ctx)).0
}

fn check_inputs(
    groups: &[Group],
    advantages: &[Vec<AdvantageSet>],
    params: &PolicyParams,
    reference: &PolicyParams,
) -> Result<()> {
    if groups.len() != advantages.len() {
        return Err(Error::LengthMismatch {
            left: groups.len(),
            right: advantages.len(),
        });
    }
    if params.shape != reference.shape {
        return Err(Error::ShapeMismatch(
            "policy and reference differ in shape".into(),
        ));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("policy logits".into()));
    }
    for (g, a) in groups.iter().zip(advantages) {
        if g.rollouts.len() != a.len() {
            return Err(Error::LengthMismatch {
                left: g.rollouts.len(),
                right: a.len(),
            });
        }
    }
    Ok(())
}

fn evaluate(
    groups: &[Group],
    advantages: &[Vec<AdvantageSet>],
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &ObjectiveConfig,
    mut grad: Option<&mut PolicyParams>,
) -> Result<ObjectiveTerms> {
    check_inputs(groups, advantages, params, reference)?;
    let n_rollouts: usize = groups.iter().map(|g| g.rollouts.len()).sum();
    if n_rollouts == 0 {
        return Err(Error::Empty("batch"));
    }
    let eps = cfg.clip_eps;
    let beta = cfg.kl_coeff;
    let mut surrogate = 0.0;
    let mut kl_total = 0.0;
    let mut ratios = Vec::new();

    for (group, advs) in groups.iter().zip(advantages) {
        for (rollout, adv) in group.rollouts.iter().zip(advs) {
            let masks = token_masks(rollout)?;
            let contexts = rollout.contexts(&params.shape)?;
            let weight = 1.0 / (n_rollouts as f64 * contexts.len() as f64);
            for (t, (ctx, tok)) in contexts.into_iter().enumerate() {
                let a = match cfg.advantage {
                    AdvantageMode::Decoupled => {
                        if masks.answer[t] {
                            adv.answer
                        } else if masks.score[t] {
                            adv.preference
                        } else {
                            0.0
                        }
                    }
                    AdvantageMode::Entangled => adv.answer,
                };
                let logits = params.logits(ctx);
                let logp = log_softmax(&logits);
                let ratio = (logp[tok] - rollout.behavior_logprobs[t]).exp();
                if !ratio.is_finite() {
                    return Err(Error::NonFinite(format!("likelihood ratio at {ctx:?}")));
                }
                ratios.push(ratio);
                surrogate += weight * clipped_term(ratio, a, eps);

                let kl_grad = if beta > 0.0 {
                    let (kl, g) = kl_with_gradient(&logits, &reference.logits(ctx));
                    kl_total += weight * kl;
                    Some(g)
                } else {
                    kl_total += weight * kl_token(params, reference, ctx);
                    None
                };

                if let Some(grad) = grad.as_deref_mut() {
                    let mut d = vec![0.0; logits.len()];
                    if !clip_active(ratio, a, eps) && a != 0.0 {
                        // d(r A)/dz = A r (e_tok - p)
                        let scale = a * ratio;
                        for (k, dk) in d.iter_mut().enumerate() {
                            let ind = if k == tok { 1.0 } else { 0.0 };
                            *dk = scale * (ind - logp[k].exp());
                        }
                    }
                    if let Some(g) = kl_grad {
                        for (dk, gk) in d.iter_mut().zip(g) {
                            *dk -= beta * gk;
                        }
                    }
                    grad.add_logit_gradient(ctx, &d, weight);
                }
            }
        }
    }
    if !surrogate.is_finite() || !kl_total.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok(ObjectiveTerms {
        surrogate,
        kl: kl_total,
        total: surrogate - beta * kl_total,
        ratios,
    })
}

/// Objective value over a batch of groups with precomputed advantages.
/// Ratios use the behavior log-probabilities stored in each rollout.
pub fn adpo_objective(
    groups: &[Group],
    advantages: &[Vec<AdvantageSet>],
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveTerms> {
    evaluate(groups, advantages, params, reference, cfg, None)
}

/// Exact gradient of [`adpo_objective`] with respect to every parameter.
pub fn adpo_gradient(
    groups: &[Group],
    advantages: &[Vec<AdvantageSet>],
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &ObjectiveConfig,
) -> Result<PolicyParams> {
    objective_and_gradient(groups, advantages, params, reference, cfg).map(|(_, g)| g)
}

pub fn objective_and_gradient(
    groups: &[Group],
    advantages: &[Vec<AdvantageSet>],
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveTerms, PolicyParams)> {
    let mut grad = params.zeros_like();
    let terms = evaluate(groups, advantages, params, reference, cfg, Some(&mut grad))?;
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((terms, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_params, logprob, Init, Rollout};
    use crate::tasks::{Task, TaskKind, TaskSpec};

    #[test]
    fn clipped_term_examples() {
        assert_eq!(clipped_term(1.0, 1.0, 0.2), 1.0);
        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_term(1.5, -1.0, 0.2), -1.5);
        assert!(clip_active(1.5, 1.0, 0.2));
        assert!(!clip_active(1.5, -1.0, 0.2));
        assert!(clip_active(0.5, -1.0, 0.2));
    }

    #[test]
    fn kl_examples() {
        let (kl, _) = kl_with_gradient(&[0.3, -1.0], &[0.3, -1.0]);
        assert_eq!(kl, 0.0);
        let (kl, _) = kl_with_gradient(&[2.0, 0.0], &[0.0, 0.0]);
        let p = [0.880_797_077_977_882_3, 0.119_202_922_022_117_7];
        let expected = p[0] * (p[0] / 0.5f64).ln() + p[1] * (p[1] / 0.5f64).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.327_813_325_472_737_5).abs() < 1e-12);
    }

    fn single_rollout_batch() -> (Vec<Group>, PolicyParams) {
        let task = Task::new(TaskSpec {
            num_queries: 1,
            ..TaskSpec::new(TaskKind::Discrete)
        })
        .unwrap();
        let params = init_params(&task, Init::Pretrained { accuracy: 0.6 }).unwrap();
        let mut r = Rollout {
            query_id: 0,
            answer_tokens: vec![2],
            score_token: 4,
            score_value: 0.4,
            behavior_logprobs: vec![0.0, 0.0],
            rewards: None,
        };
        r.behavior_logprobs = logprob(&params, &r).unwrap();
        (
            vec![Group {
                query_id: 0,
                rollouts: vec![r],
            }],
            params,
        )
    }

    fn adv(answer: f64, preference: f64) -> Vec<Vec<AdvantageSet>> {
        vec![vec![AdvantageSet {
            answer,
            preference,
            per_token: vec![answer, preference],
        }]]
    }

    #[test]
    fn objective_at_snapshot() {
        let (groups, params) = single_rollout_batch();
        let cfg = ObjectiveConfig {
            kl_coeff: 0.0,
            ..Default::default()
        };
        let zero = adpo_objective(&groups, &adv(0.0, 0.0), &params, &params, &cfg).unwrap();
        assert_eq!(zero.total, 0.0);
        assert!(zero.ratios.iter().all(|&r| (r - 1.0).abs() < 1e-12));

        let d = adpo_objective(&groups, &adv(1.0, -1.0), &params, &params, &cfg).unwrap();
        assert!(d.total.abs() < 1e-15);

        let ent = ObjectiveConfig {
            advantage: AdvantageMode::Entangled,
            ..cfg
        };
        let e = adpo_objective(&groups, &adv(1.0, 1.0), &params, &params, &ent).unwrap();
        assert!((e.total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_advantage_zero_gradient() {
        let (groups, params) = single_rollout_batch();
        let cfg = ObjectiveConfig {
            kl_coeff: 0.0,
            ..Default::default()
        };
        let g = adpo_gradient(&groups, &adv(0.0, 0.0), &params, &params, &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipped_tokens_carry_no_gradient() {
        let (mut groups, params) = single_rollout_batch();
        // ratio well above 1 + eps on both tokens
        for lp in &mut groups[0].rollouts[0].behavior_logprobs {
            *lp -= 1.0;
        }
        let cfg = ObjectiveConfig {
            kl_coeff: 0.0,
            ..Default::default()
        };
        let g = adpo_gradient(&groups, &adv(1.0, 1.0), &params, &params, &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = adpo_gradient(&groups, &adv(-1.0, -1.0), &params, &params, &cfg).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn kl_lowers_objective_monotonically() {
        let (groups, params) = single_rollout_batch();
        let reference = init_params(
            &Task::new(TaskSpec {
                num_queries: 1,
                ..TaskSpec::new(TaskKind::Discrete)
            })
            .unwrap(),
            Init::Uniform,
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for beta in [0.0, 0.01, 0.1, 1.0] {
            let cfg = ObjectiveConfig {
                kl_coeff: beta,
                ..Default::default()
            };
            let t = adpo_objective(&groups, &adv(0.5, -0.3), &params, &reference, &cfg).unwrap();
            assert!(t.kl > 0.0);
            assert!((t.total - (t.surrogate - beta * t.kl)).abs() < 1e-15);
            assert!(t.total < last || beta == 0.0);
            last = t.total;
        }
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (groups, params) = single_rollout_batch();
        let cfg = ObjectiveConfig::default();
        assert!(adpo_objective(&groups, &[], &params, &params, &cfg).is_err());
        let mut bad = params.clone();
        bad.score_slope = f64::NAN;
        assert!(adpo_objective(&groups, &adv(1.0, 1.0), &bad, &params, &cfg).is_err());
        assert!(ObjectiveConfig {
            clip_eps: 1.0,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
