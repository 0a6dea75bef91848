//! The outer reinforcement-learning loop.
//!
//! Each step snapshots the behavior policy implicitly (rollouts carry their
//! own sampling log-probabilities), collects `G` rollouts for every query in
//! the batch, computes rewards and advantages, and runs `inner_epochs`
//! gradient-ascent passes over the same batch. Metrics describe the
//! pre-update rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{group_advantages, AdvantageSet};
use crate::error::{Error, Result};
use crate::evaluation::{auc, average_precision};
use crate::objective::{objective_and_gradient, ObjectiveConfig};
use crate::policy::{
    init_params, sample_rollout, snapshot, DecodeConfig, Group, Init, PolicyParams,
};
use crate::rewards::{group_rewards, is_success, Thresholds, VerificationMode};
use crate::seeding;
use crate::tasks::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub batch_queries: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate of the answer head only.
    pub answer_lr_scale: f64,
    pub steps: usize,
    pub inner_epochs: usize,
    pub decode: DecodeConfig,
    pub objective: ObjectiveConfig,
    pub thresholds: Thresholds,
    pub init: Init,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults sized for tabular policies.
    pub fn toy() -> Self {
        TrainConfig {
            group_size: 8,
            batch_queries: 16,
            learning_rate: 8.0,
            answer_lr_scale: 0.01,
            steps: 200,
            inner_epochs: 2,
            decode: DecodeConfig::ROLLOUT,
            objective: ObjectiveConfig::default(),
            thresholds: Thresholds::default(),
            init: Init::Pretrained { accuracy: 0.85 },
            seed: 0,
        }
    }

    /// Published large-model values, kept for reference runs.
    pub fn paper() -> Self {
        TrainConfig {
            batch_queries: 128,
            learning_rate: 1e-6,
            answer_lr_scale: 1.0,
            steps: 1200,
            inner_epochs: 1,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config(
                "train.group_size",
                format!(
                    "G must be >= 2 (preference rewards need comparisons), got {}",
                    self.group_size
                ),
            ));
        }
        if self.batch_queries == 0 {
            return Err(Error::config("train.batch_queries", "must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(
                "train.learning_rate",
                "must be finite and >= 0",
            ));
        }
        if !(self.answer_lr_scale >= 0.0) || !self.answer_lr_scale.is_finite() {
            return Err(Error::config(
                "train.answer_lr_scale",
                "must be finite and >= 0",
            ));
        }
        if self.inner_epochs == 0 {
            return Err(Error::config("train.inner_epochs", "must be >= 1"));
        }
        self.decode
            .validate()
            .map_err(|e| Error::config("train.decode", e.to_string()))?;
        self.objective
            .validate()
            .map_err(|e| Error::config("objective", e.to_string()))?;
        self.thresholds
            .validate()
            .map_err(|e| Error::config("thresholds", e.to_string()))?;
        if let Init::Pretrained { accuracy } = self.init {
            if !(accuracy > 0.0 && accuracy < 1.0) {
                return Err(Error::config("init.accuracy", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Per-step diagnostics of the collected (pre-update) rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_answer_reward: f64,
    pub pass_at_1: f64,
    pub fraction_max_score: f64,
    /// Absent when no rollout earned verification reward 1.
    pub frac_correct_among_verif1: Option<f64>,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub objective: f64,
    pub kl: f64,
    /// A wrong, low-scored rollout received a larger answer-token advantage
    /// than some correct rollout in the same batch.
    pub hacking_witness: bool,
}

/// Samples `group_size` rollouts for each query id. Each batch slot draws
/// from its own RNG stream, so results do not depend on thread scheduling.
pub fn collect_groups(
    params: &PolicyParams,
    task: &Task,
    query_ids: &[usize],
    group_size: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Vec<Group>> {
    query_ids
        .par_iter()
        .enumerate()
        .map(|(slot, &qid)| {
            let query = task.query(qid)?;
            let mut rng = seeding::stream_rng(seed, slot as u64);
            let rollouts = (0..group_size)
                .map(|_| sample_rollout(params, query, decode, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(Group {
                query_id: qid,
                rollouts,
            })
        })
        .collect()
}

/// Fills rollout rewards in place.
pub fn assign_rewards(
    task: &Task,
    groups: &mut [Group],
    mode: VerificationMode,
    th: &Thresholds,
) -> Result<()> {
    for group in groups.iter_mut() {
        let rewards = group_rewards(task, group, mode, th)?;
        for (r, b) in group.rollouts.iter_mut().zip(rewards) {
            r.rewards = Some(b);
        }
    }
    Ok(())
}

pub(crate) fn hacking_witness(
    task: &Task,
    groups: &[Group],
    advantages: &[Vec<AdvantageSet>],
    th: &Thresholds,
) -> bool {
    let mut lowest_correct = f64::INFINITY;
    let mut highest_wrong_low = f64::NEG_INFINITY;
    for (g, advs) in groups.iter().zip(advantages) {
        for (r, a) in g.rollouts.iter().zip(advs) {
            let ra = r.rewards.map_or(0.0, |b| b.answer);
            if is_success(task.kind(), ra) {
                lowest_correct = lowest_correct.min(a.answer);
            } else if r.score_value < th.tau_s {
                highest_wrong_low = highest_wrong_low.max(a.answer);
            }
        }
    }
    highest_wrong_low > lowest_correct
}

fn step_metrics(task: &Task, groups: &[Group], mode: VerificationMode) -> StepMetrics {
    let rollouts: Vec<_> = groups.iter().flat_map(|g| &g.rollouts).collect();
    let n = rollouts.len().max(1) as f64;
    let answer: Vec<f64> = rollouts
        .iter()
        .map(|r| r.rewards.map_or(0.0, |b| b.answer))
        .collect();
    let labels: Vec<bool> = answer
        .iter()
        .map(|&ra| is_success(task.kind(), ra))
        .collect();
    let scores: Vec<f64> = rollouts.iter().map(|r| r.score_value).collect();
    let top_bin = task.spec.score_bins - 1;

    let verif1: Vec<bool> = rollouts
        .iter()
        .zip(&labels)
        .filter(|(r, _)| {
            mode != VerificationMode::None && r.rewards.is_some_and(|b| b.verification() == 1.0)
        })
        .map(|(_, &l)| l)
        .collect();

    StepMetrics {
        step: 0,
        mean_answer_reward: answer.iter().sum::<f64>() / n,
        pass_at_1: labels.iter().filter(|&&l| l).count() as f64 / n,
        fraction_max_score: rollouts.iter().filter(|r| r.score_token == top_bin).count() as f64 / n,
        frac_correct_among_verif1: (!verif1.is_empty())
            .then(|| verif1.iter().filter(|&&l| l).count() as f64 / verif1.len() as f64),
        auc: auc(&scores, &labels),
        ap: average_precision(&scores, &labels),
        objective: 0.0,
        kl: 0.0,
        hacking_witness: false,
    }
}

/// Mutable training state. The reference policy is fixed at construction.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub task: &'a Task,
    pub config: TrainConfig,
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(task: &'a Task, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(task, config.init)?;
        Ok(Self::with_params(task, config, params))
    }

    /// Starts from explicit parameters, which also become the reference.
    pub fn with_params(task: &'a Task, config: TrainConfig, params: PolicyParams) -> Self {
        Trainer {
            task,
            config,
            reference: snapshot(&params),
            params,
            step: 0,
        }
    }

    /// Query ids of the batch for `step`; batches cycle through the task.
    pub fn batch_for(&self, step: usize) -> Vec<usize> {
        let n = self.task.queries.len();
        let b = self.config.batch_queries;
        (0..b).map(|j| (step * b + j) % n).collect()
    }

    /// Rollouts with rewards and advantages for `batch`, sampled from the
    /// current parameters with this step's seed.
    pub fn prepare(&self, batch: &[usize]) -> Result<(Vec<Group>, Vec<Vec<AdvantageSet>>)> {
        let cfg = &self.config;
        let seed = seeding::derive(cfg.seed, self.step as u64);
        let mut groups = collect_groups(
            &self.params,
            self.task,
            batch,
            cfg.group_size,
            &cfg.decode,
            seed,
        )?;
        assign_rewards(
            self.task,
            &mut groups,
            cfg.objective.verification,
            &cfg.thresholds,
        )?;
        let advantages = groups
            .iter()
            .map(|g| group_advantages(g, cfg.objective.advantage))
            .collect::<Result<Vec<_>>>()?;
        Ok((groups, advantages))
    }

    pub fn train_step(&mut self, batch: &[usize]) -> Result<StepMetrics> {
        let (groups, advantages) = self.prepare(batch)?;
        let cfg = &self.config;
        let mut metrics = step_metrics(self.task, &groups, cfg.objective.verification);
        metrics.step = self.step;
        metrics.hacking_witness = hacking_witness(self.task, &groups, &advantages, &cfg.thresholds);

        for epoch in 0..cfg.inner_epochs {
            let (terms, grad) = objective_and_gradient(
                &groups,
                &advantages,
                &self.params,
                &self.reference,
                &cfg.objective,
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at step {} epoch {epoch}", self.step))
                }
                other => other,
            })?;
            if epoch == 0 {
                metrics.objective = terms.total;
                metrics.kl = terms.kl;
            }
            if cfg.learning_rate > 0.0 {
                let mut grad = grad;
                grad.scale_answer_head(cfg.answer_lr_scale);
                self.params.axpy(cfg.learning_rate, &grad)?;
            }
        }
        if !self.params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after step {}",
                self.step
            )));
        }
        self.step += 1;
        Ok(metrics)
    }

    /// One step on the next cyclic batch.
    pub fn advance(&mut self) -> Result<StepMetrics> {
        let batch = self.batch_for(self.step);
        self.train_step(&batch)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<StepMetrics>,
    pub params: PolicyParams,
}

/// Runs `config.steps` steps, reporting each step to `observer`.
pub fn train_with<F>(config: &TrainConfig, task: &Task, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepMetrics) -> Result<()>,
{
    let mut trainer = Trainer::new(task, config.clone())?;
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let m = trainer.advance()?;
        observer(&m)?;
        history.push(m);
    }
    Ok(TrainOutcome {
        history,
        params: trainer.params,
    })
}

pub fn train(config: &TrainConfig, task: &Task) -> Result<TrainOutcome> {
    train_with(config, task, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::AdvantageMode;
    use crate::objective::adpo_objective;
    use crate::tasks::{TaskKind, TaskSpec};

    fn small_task() -> Task {
        Task::new(TaskSpec {
            num_queries: 6,
            ..TaskSpec::new(TaskKind::Discrete)
        })
        .unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            batch_queries: 2,
            steps: 5,
            ..TrainConfig::toy()
        }
    }

    #[test]
    fn collect_counts_and_determinism() {
        let task = small_task();
        let params = init_params(&task, Init::Uniform).unwrap();
        let a = collect_groups(&params, &task, &[0, 1], 8, &DecodeConfig::ROLLOUT, 3).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.iter().map(|g| g.rollouts.len()).sum::<usize>(), 16);
        assert_eq!(
            a,
            collect_groups(&params, &task, &[0, 1], 8, &DecodeConfig::ROLLOUT, 3).unwrap()
        );
    }

    #[test]
    fn singleton_groups_get_no_preference_reward() {
        let task = small_task();
        let params = init_params(&task, Init::Uniform).unwrap();
        let mut g =
            collect_groups(&params, &task, &[0, 1, 2], 1, &DecodeConfig::ROLLOUT, 3).unwrap();
        assign_rewards(
            &task,
            &mut g,
            VerificationMode::Preference,
            &Thresholds::default(),
        )
        .unwrap();
        assert!(g
            .iter()
            .all(|g| g.rollouts[0].rewards.unwrap().preference == Some(0.0)));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let task = small_task();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..config()
        };
        let out = train(&cfg, &task).unwrap();
        assert_eq!(out.history.len(), 5);
        assert_eq!(out.params, init_params(&task, cfg.init).unwrap());
    }

    #[test]
    fn zero_steps_returns_init() {
        let task = small_task();
        let cfg = TrainConfig {
            steps: 0,
            ..config()
        };
        let out = train(&cfg, &task).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.params, init_params(&task, cfg.init).unwrap());
    }

    #[test]
    fn ascent_step_does_not_lower_objective() {
        let task = small_task();
        for advantage in [AdvantageMode::Decoupled, AdvantageMode::Entangled] {
            let cfg = TrainConfig {
                inner_epochs: 1,
                learning_rate: 1e-3,
                objective: ObjectiveConfig {
                    advantage,
                    ..Default::default()
                },
                ..config()
            };
            let mut t = Trainer::new(&task, cfg.clone()).unwrap();
            let batch = t.batch_for(0);
            let (groups, advs) = t.prepare(&batch).unwrap();
            let before =
                adpo_objective(&groups, &advs, &t.params, &t.reference, &cfg.objective).unwrap();
            t.train_step(&batch).unwrap();
            let after =
                adpo_objective(&groups, &advs, &t.params, &t.reference, &cfg.objective).unwrap();
            assert!(
                after.total >= before.total,
                "{} < {}",
                after.total,
                before.total
            );
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let task = small_task();
        let a = train(&config(), &task).unwrap();
        let b = train(&config(), &task).unwrap();
        assert_eq!(a.history, b.history);
        for (x, y) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn reference_never_moves() {
        let task = small_task();
        let mut t = Trainer::new(&task, config()).unwrap();
        let reference = t.reference.clone();
        for _ in 0..3 {
            t.advance().unwrap();
        }
        assert_eq!(t.reference, reference);
        assert_ne!(t.params, reference);
    }

    #[test]
    fn homogeneous_batches_leave_score_head_alone() {
        // an answer head this sharp makes every group all-correct
        let task = small_task();
        let mut params = init_params(&task, Init::Uniform).unwrap();
        for q in &task.queries {
            let tok = task.spec.reference_tokens(q)[0];
            params.answer_logits[0][q.id * 8 + tok] = 60.0;
        }
        let cfg = TrainConfig {
            objective: ObjectiveConfig {
                kl_coeff: 0.0,
                ..Default::default()
            },
            ..config()
        };
        let mut t = Trainer::with_params(&task, cfg, params.clone());
        for _ in 0..3 {
            let m = t.advance().unwrap();
            assert_eq!(m.pass_at_1, 1.0);
        }
        assert_eq!(t.params.score_logits, params.score_logits);
        assert_eq!(t.params.score_slope, params.score_slope);
    }

    #[test]
    fn metrics_are_fractions() {
        let task = small_task();
        let out = train(&config(), &task).unwrap();
        for m in &out.history {
            for v in [m.pass_at_1, m.fraction_max_score, m.mean_answer_reward] {
                assert!((0.0..=1.0).contains(&v));
            }
            if let Some(f) = m.frac_correct_among_verif1 {
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            group_size: 1,
            ..TrainConfig::toy()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("G must be >= 2"), "{err}");
        assert!(TrainConfig {
            inner_epochs: 0,
            ..TrainConfig::toy()
        }
        .validate()
        .is_err());
    }
}
