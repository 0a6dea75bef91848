//! Synthetic task families with known ground truth.
//!
//! Three families mirror the answer spaces the method is trained on:
//!
//! * `Discrete`: one answer token out of `K`, exact-match correctness.
//! * `Interval`: one token selects a center bin `c = bin / (K - 1)`; the
//!   answer is the interval `[c - w/2, c + w/2]` clipped to `[0, 1]`, graded
//!   by IoU against a ground-truth interval of the same width.
//! * `Agent`: two tokens, an action type and a cell on a `sqrt(K) x sqrt(K)`
//!   grid over the unit square; graded by type match plus click distance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Discrete,
    Interval,
    Agent,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Discrete => "discrete",
            TaskKind::Interval => "interval",
            TaskKind::Agent => "agent",
        }
    }

    /// Discrete answers are compared by exact match; the other kinds carry a
    /// graded answer reward and use the margin-based contrastive sets.
    pub fn is_continuous(self) -> bool {
        !matches!(self, TaskKind::Discrete)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GroundTruth {
    Discrete(usize),
    Interval { lo: f64, hi: f64 },
    Agent { action_type: usize, x: f64, y: f64 },
}

impl GroundTruth {
    pub fn kind(&self) -> TaskKind {
        match self {
            GroundTruth::Discrete(_) => TaskKind::Discrete,
            GroundTruth::Interval { .. } => TaskKind::Interval,
            GroundTruth::Agent { .. } => TaskKind::Agent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: usize,
    pub truth: GroundTruth,
}

impl Query {
    pub fn kind(&self) -> TaskKind {
        self.truth.kind()
    }
}

/// A decoded answer in the task's native space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodedAnswer {
    Discrete(usize),
    Interval {
        bin: usize,
        lo: f64,
        hi: f64,
    },
    Agent {
        action_type: usize,
        cell: usize,
        x: f64,
        y: f64,
    },
}

impl DecodedAnswer {
    pub fn kind(&self) -> TaskKind {
        match self {
            DecodedAnswer::Discrete(_) => TaskKind::Discrete,
            DecodedAnswer::Interval { .. } => TaskKind::Interval,
            DecodedAnswer::Agent { .. } => TaskKind::Agent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub num_queries: usize,
    /// `K`: answer vocabulary for discrete/interval, grid cells for agent.
    pub answer_vocab: usize,
    pub score_bins: usize,
    pub interval_width: f64,
    pub num_action_types: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        let answer_vocab = match kind {
            TaskKind::Discrete => 8,
            TaskKind::Interval => 21,
            TaskKind::Agent => 16,
        };
        TaskSpec {
            kind,
            num_queries: 64,
            answer_vocab,
            score_bins: 11,
            interval_width: 0.2,
            num_action_types: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Err(Error::InvalidSpec("num_queries must be positive".into()));
        }
        if self.answer_vocab < 2 {
            return Err(Error::InvalidSpec("answer_vocab must be at least 2".into()));
        }
        if self.score_bins < 2 {
            return Err(Error::InvalidSpec("score_bins must be at least 2".into()));
        }
        match self.kind {
            TaskKind::Discrete => {}
            TaskKind::Interval => {
                let w = self.interval_width;
                if !(w > 0.0 && w <= 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "interval_width must lie in (0, 1], got {w}"
                    )));
                }
            }
            TaskKind::Agent => {
                if self.num_action_types == 0 {
                    return Err(Error::InvalidSpec(
                        "num_action_types must be positive".into(),
                    ));
                }
                if self.grid_side().is_none() {
                    return Err(Error::InvalidSpec(format!(
                        "agent answer_vocab must be a perfect square, got {}",
                        self.answer_vocab
                    )));
                }
            }
        }
        Ok(())
    }

    /// Side length of the agent click grid, if `K` is a perfect square.
    pub fn grid_side(&self) -> Option<usize> {
        let side = (self.answer_vocab as f64).sqrt().round() as usize;
        (side * side == self.answer_vocab).then_some(side)
    }

    /// Vocabulary size of each answer position.
    pub fn answer_vocabs(&self) -> Vec<usize> {
        match self.kind {
            TaskKind::Discrete | TaskKind::Interval => vec![self.answer_vocab],
            TaskKind::Agent => vec![self.num_action_types, self.answer_vocab],
        }
    }

    /// Number of distinct complete answers (the score head's answer index).
    pub fn num_answers(&self) -> usize {
        self.answer_vocabs().iter().product()
    }

    /// Row-major encoding of an answer token sequence.
    pub fn answer_index(&self, tokens: &[usize]) -> Result<usize> {
        let vocabs = self.answer_vocabs();
        if tokens.len() != vocabs.len() {
            return Err(Error::MalformedRollout(format!(
                "{} task expects {} answer tokens, got {}",
                self.kind.name(),
                vocabs.len(),
                tokens.len()
            )));
        }
        let mut index = 0;
        for (&tok, &v) in tokens.iter().zip(&vocabs) {
            if tok >= v {
                return Err(Error::MalformedRollout(format!(
                    "token {tok} outside vocabulary of size {v}"
                )));
            }
            index = index * v + tok;
        }
        Ok(index)
    }

    /// Decodes answer tokens for `query` into the task's answer space.
    pub fn decode_answer(&self, query: &Query, tokens: &[usize]) -> Result<DecodedAnswer> {
        if query.kind() != self.kind {
            return Err(Error::KindMismatch {
                expected: self.kind.name(),
                found: query.kind().name(),
            });
        }
        self.answer_index(tokens)?;
        Ok(match self.kind {
            TaskKind::Discrete => DecodedAnswer::Discrete(tokens[0]),
            TaskKind::Interval => {
                let bin = tokens[0];
                let center = self.bin_center(bin);
                let half = self.interval_width / 2.0;
                DecodedAnswer::Interval {
                    bin,
                    lo: (center - half).max(0.0),
                    hi: (center + half).min(1.0),
                }
            }
            TaskKind::Agent => {
                let (x, y) = self.cell_center(tokens[1]);
                DecodedAnswer::Agent {
                    action_type: tokens[0],
                    cell: tokens[1],
                    x,
                    y,
                }
            }
        })
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        bin as f64 / (self.answer_vocab - 1) as f64
    }

    /// Center of grid cell `cell`, laid out row-major with `x` along columns.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let side = self.grid_side().unwrap_or(1);
        let (row, col) = (cell / side, cell % side);
        (
            (col as f64 + 0.5) / side as f64,
            (row as f64 + 0.5) / side as f64,
        )
    }

    fn cell_of(&self, x: f64, y: f64) -> usize {
        let side = self.grid_side().unwrap_or(1);
        let clamp = |v: f64| ((v * side as f64).floor() as usize).min(side - 1);
        clamp(y) * side + clamp(x)
    }

    /// Token sequence closest to the ground truth; used to bias a
    /// "pretrained" initialization.
    pub fn reference_tokens(&self, query: &Query) -> Vec<usize> {
        match query.truth {
            GroundTruth::Discrete(tok) => vec![tok],
            GroundTruth::Interval { lo, hi } => {
                let center = (lo + hi) / 2.0;
                vec![(center * (self.answer_vocab - 1) as f64).round() as usize]
            }
            GroundTruth::Agent { action_type, x, y } => vec![action_type, self.cell_of(x, y)],
        }
    }

    /// Encoding used when voting over answers: the answer index.
    pub fn vote_key(&self, tokens: &[usize]) -> Result<usize> {
        self.answer_index(tokens)
    }
}

/// Generates `spec.num_queries` queries; a pure function of the `TaskSpec`.
pub fn make_task(spec: &TaskSpec) -> Result<Vec<Query>> {
    spec.validate()?;
    let mut rng = seeding::stream_rng(spec.seed, 0);
    let queries = (0..spec.num_queries)
        .map(|id| {
            let truth = match spec.kind {
                TaskKind::Discrete => GroundTruth::Discrete(rng.gen_range(0..spec.answer_vocab)),
                TaskKind::Interval => {
                    let w = spec.interval_width;
                    let lo = if w < 1.0 {
                        rng.gen_range(0.0..=1.0 - w)
                    } else {
                        0.0
                    };
                    GroundTruth::Interval {
                        lo,
                        hi: (lo + w).min(1.0),
                    }
                }
                TaskKind::Agent => GroundTruth::Agent {
                    action_type: rng.gen_range(0..spec.num_action_types),
                    x: rng.gen_range(0.0..1.0),
                    y: rng.gen_range(0.0..1.0),
                },
            };
            Query { id, truth }
        })
        .collect();
    Ok(queries)
}

/// A task spec together with its generated queries.
#[derive(Debug, Clone)]
pub struct Task {
    pub spec: TaskSpec,
    pub queries: Vec<Query>,
}

impl Task {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        let queries = make_task(&spec)?;
        Ok(Task { spec, queries })
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind
    }

    pub fn query(&self, id: usize) -> Result<&Query> {
        self.queries.get(id).ok_or(Error::IndexOutOfRange {
            index: id,
            len: self.queries.len(),
        })
    }

    pub fn decode_answer(&self, query: &Query, tokens: &[usize]) -> Result<DecodedAnswer> {
        self.spec.decode_answer(query, tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discrete(num_queries: usize, k: usize, seed: u64) -> TaskSpec {
        TaskSpec {
            num_queries,
            answer_vocab: k,
            seed,
            ..TaskSpec::new(TaskKind::Discrete)
        }
    }

    #[test]
    fn discrete_task_is_deterministic() {
        let spec = discrete(4, 8, 7);
        let a = make_task(&spec).unwrap();
        let b = make_task(&spec).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        for q in &a {
            match q.truth {
                GroundTruth::Discrete(t) => assert!(t < 8),
                _ => panic!("wrong kind"),
            }
        }
    }

    #[test]
    fn interval_truths_have_fixed_width() {
        let spec = TaskSpec {
            num_queries: 200,
            interval_width: 0.2,
            ..TaskSpec::new(TaskKind::Interval)
        };
        for q in make_task(&spec).unwrap() {
            let GroundTruth::Interval { lo, hi } = q.truth else {
                panic!("wrong kind")
            };
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            assert!(lo < hi);
            assert!((hi - lo - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_queries_rejected() {
        assert!(matches!(
            make_task(&discrete(0, 8, 0)),
            Err(Error::InvalidSpec(_))
        ));
        assert!(make_task(&discrete(3, 1, 0)).is_err());
        let bad_grid = TaskSpec {
            answer_vocab: 15,
            ..TaskSpec::new(TaskKind::Agent)
        };
        assert!(make_task(&bad_grid).is_err());
    }

    #[test]
    fn decode_discrete_identity() {
        let spec = discrete(1, 8, 0);
        let q = make_task(&spec).unwrap()[0];
        assert_eq!(
            spec.decode_answer(&q, &[5]).unwrap(),
            DecodedAnswer::Discrete(5)
        );
    }

    #[test]
    fn decode_interval_center() {
        let spec = TaskSpec {
            answer_vocab: 11,
            interval_width: 0.2,
            num_queries: 1,
            ..TaskSpec::new(TaskKind::Interval)
        };
        let q = make_task(&spec).unwrap()[0];
        let DecodedAnswer::Interval { lo, hi, bin } = spec.decode_answer(&q, &[5]).unwrap() else {
            panic!()
        };
        assert_eq!(bin, 5);
        assert!((lo - 0.4).abs() < 1e-12 && (hi - 0.6).abs() < 1e-12);
        // edge bins are clipped to the unit interval
        let DecodedAnswer::Interval { lo, hi, .. } = spec.decode_answer(&q, &[0]).unwrap() else {
            panic!()
        };
        assert_eq!(lo, 0.0);
        assert!((hi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn interval_centers_round_trip() {
        let spec = TaskSpec {
            answer_vocab: 21,
            ..TaskSpec::new(TaskKind::Interval)
        };
        for b in 0..21 {
            assert_eq!(spec.bin_center(b), b as f64 / 20.0);
        }
    }

    #[test]
    fn decode_agent_cell_center() {
        let spec = TaskSpec {
            answer_vocab: 16,
            num_queries: 1,
            ..TaskSpec::new(TaskKind::Agent)
        };
        let q = make_task(&spec).unwrap()[0];
        let DecodedAnswer::Agent {
            action_type, x, y, ..
        } = spec.decode_answer(&q, &[2, 5]).unwrap()
        else {
            panic!()
        };
        assert_eq!(action_type, 2);
        assert_eq!((x, y), (0.375, 0.375));
    }

    #[test]
    fn wrong_token_count_is_malformed() {
        let spec = TaskSpec {
            num_queries: 1,
            ..TaskSpec::new(TaskKind::Agent)
        };
        let q = make_task(&spec).unwrap()[0];
        assert!(matches!(
            spec.decode_answer(&q, &[1]),
            Err(Error::MalformedRollout(_))
        ));
        let d = discrete(1, 8, 0);
        let dq = make_task(&d).unwrap()[0];
        assert!(matches!(
            d.decode_answer(&dq, &[1, 2]),
            Err(Error::MalformedRollout(_))
        ));
        assert!(d.decode_answer(&dq, &[8]).is_err());
    }

    #[test]
    fn reference_tokens_decode_near_truth() {
        let spec = TaskSpec {
            num_queries: 50,
            ..TaskSpec::new(TaskKind::Agent)
        };
        for q in make_task(&spec).unwrap() {
            let toks = spec.reference_tokens(&q);
            let DecodedAnswer::Agent { x, y, .. } = spec.decode_answer(&q, &toks).unwrap() else {
                panic!()
            };
            let GroundTruth::Agent { x: tx, y: ty, .. } = q.truth else {
                panic!()
            };
            assert!((x - tx).abs() <= 0.125 + 1e-12 && (y - ty).abs() <= 0.125 + 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decoded_coordinates_stay_in_unit_range(
                k in 2usize..40, w in 0.01f64..1.0, tok in 0usize..40, side in 1usize..7, ty in 0usize..4, cell in 0usize..49
            ) {
                let interval = TaskSpec { answer_vocab: k, interval_width: w, num_queries: 1, ..TaskSpec::new(TaskKind::Interval) };
                let q = make_task(&interval).unwrap()[0];
                if tok < k {
                    let DecodedAnswer::Interval { lo, hi, .. } = interval.decode_answer(&q, &[tok]).unwrap() else { panic!() };
                    prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi);
                }
                let agent = TaskSpec { answer_vocab: (side + 1) * (side + 1), num_queries: 1, ..TaskSpec::new(TaskKind::Agent) };
                let q = make_task(&agent).unwrap()[0];
                if cell < agent.answer_vocab {
                    let DecodedAnswer::Agent { x, y, .. } = agent.decode_answer(&q, &[ty, cell]).unwrap() else { panic!() };
                    prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
                }
            }
        }
    }
}
