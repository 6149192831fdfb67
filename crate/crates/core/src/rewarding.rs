//! Final-answer and answer-plus-process rewards, threshold filtering, and a
//! simulated noisy process reward model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::task::{Query, Response, Task};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub total: f64,
    pub answer_part: u8,
    pub prm_part: Option<f64>,
}

impl RewardScore {
    pub fn answer_only(correct: bool) -> Self {
        let answer_part = u8::from(correct);
        Self {
            total: f64::from(answer_part),
            answer_part,
            prm_part: None,
        }
    }

    /// `1(correct) + (2 * min_step_probability - 1)`.
    pub fn combined(correct: bool, min_step_probability: f64) -> Self {
        let answer_part = u8::from(correct);
        let prm = normalize(min_step_probability);
        Self {
            total: f64::from(answer_part) + prm,
            answer_part,
            prm_part: Some(prm),
        }
    }
}

/// Maps a solution probability in `[0, 1]` onto `[-1, 1]`.
pub fn normalize(probability: f64) -> f64 {
    2.0 * probability - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    AnswerOnly,
    AnswerPlusPrm,
}

/// Per-step scorer backed by the exact step labels, with each label flipped
/// independently with probability `noise`.
///
/// A step observed as good scores `1 - noise`, a step observed as bad scores
/// `noise`; `jitter` adds a uniform perturbation of half-width
/// `jitter * noise` around that value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPrm {
    pub noise: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl SimulatedPrm {
    pub fn new(noise: f64, jitter: f64, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&noise) {
            return Err(Error::Config(format!("prm noise must be in [0, 0.5), got {noise}")));
        }
        if !(0.0..=1.0).contains(&jitter) {
            return Err(Error::Config(format!("prm jitter must be in [0, 1], got {jitter}")));
        }
        Ok(Self { noise, jitter, seed })
    }

    fn rng_for(&self, q: &Query, r: &Response) -> seed::Rng {
        let key: Vec<u8> = r.steps.iter().map(|t| t.0).collect();
        seed::stream(self.seed ^ seed::fnv1a64(&key), "prm", q.id)
    }

    /// Observed labels and per-step probabilities.
    pub fn step_scores(&self, task: &Task, q: &Query, r: &Response) -> Result<Vec<(bool, f64)>> {
        if r.steps.is_empty() {
            return Err(Error::MalformedResponse(format!("empty step sequence for query {}", q.id)));
        }
        let labels = task.step_labels(q, &r.steps)?;
        let mut rng = self.rng_for(q, r);
        let half_width = self.jitter * self.noise;
        Ok(labels
            .into_iter()
            .map(|good| {
                let flip = rng.gen::<f64>() < self.noise;
                let u = rng.gen::<f64>();
                let observed = good != flip;
                let base = if observed { 1.0 - self.noise } else { self.noise };
                let p = (base + half_width * (2.0 * u - 1.0)).clamp(0.0, 1.0);
                (observed, p)
            })
            .collect())
    }

    /// Minimum step probability, normalized to `[-1, 1]`.
    pub fn score(&self, task: &Task, q: &Query, r: &Response) -> Result<f64> {
        let min = self
            .step_scores(task, q, r)?
            .into_iter()
            .map(|(_, p)| p)
            .fold(f64::INFINITY, f64::min);
        Ok(normalize(min))
    }
}

pub fn answer_reward(task: &Task, q: &Query, r: &Response) -> Result<RewardScore> {
    Ok(RewardScore::answer_only(task.verify(q, r)?))
}

pub fn combined_reward(prm: &SimulatedPrm, task: &Task, q: &Query, r: &Response) -> Result<RewardScore> {
    let correct = task.verify(q, r)?;
    let prm_part = prm.score(task, q, r)?;
    let answer_part = u8::from(correct);
    Ok(RewardScore {
        total: f64::from(answer_part) + prm_part,
        answer_part,
        prm_part: Some(prm_part),
    })
}

/// Anything that assigns a scalar reward to a response.
pub trait RewardModel: Send + Sync {
    fn score(&self, task: &Task, q: &Query, r: &Response) -> Result<RewardScore>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reward {
    AnswerOnly,
    AnswerPlusPrm(SimulatedPrm),
}

impl Reward {
    pub fn mode(&self) -> RewardMode {
        match self {
            Reward::AnswerOnly => RewardMode::AnswerOnly,
            Reward::AnswerPlusPrm(_) => RewardMode::AnswerPlusPrm,
        }
    }
}

impl RewardModel for Reward {
    fn score(&self, task: &Task, q: &Query, r: &Response) -> Result<RewardScore> {
        match self {
            Reward::AnswerOnly => answer_reward(task, q, r),
            // Only trivial queries (start == target) yield empty responses.
            Reward::AnswerPlusPrm(_) if r.steps.is_empty() => {
                Ok(RewardScore::combined(task.verify(q, r)?, 1.0))
            }
            Reward::AnswerPlusPrm(prm) => combined_reward(prm, task, q, r),
        }
    }
}

pub trait Scored {
    fn total(&self) -> f64;
}

impl Scored for RewardScore {
    fn total(&self) -> f64 {
        self.total
    }
}

impl<R> Scored for (R, RewardScore) {
    fn total(&self) -> f64 {
        self.1.total
    }
}

/// Keeps exactly the items whose total is strictly greater than `tau`, in
/// order.
pub fn filter<T: Scored>(pool: &[T], tau: f64) -> Vec<&T> {
    pool.iter().filter(|item| item.total() > tau).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub query_id: u64,
    pub candidate_index: usize,
    pub answer_part: u8,
    pub prm_part: Option<f64>,
    pub total: f64,
}
