//! Exploration and exploitation metrics over candidate pools, and the
//! balance score.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::controller::ConfigPoint;
use crate::error::{Error, Result};
use crate::rewarding::{RewardScore, Scored};
use crate::scalar::Scalar;
use crate::task::{OpToken, Response};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub response: Response,
    pub reward: RewardScore,
    pub correct: bool,
}

impl Scored for Candidate {
    fn total(&self) -> f64 {
        self.reward.total
    }
}

/// The `k` candidates sampled for one query at one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: u64,
    pub candidates: Vec<Candidate>,
    pub sampled_at: ConfigPoint,
}

impl CandidatePool {
    pub fn new(query_id: u64, candidates: Vec<Candidate>, sampled_at: ConfigPoint) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Argument(format!("empty candidate pool for query {query_id}")));
        }
        Ok(Self {
            query_id,
            candidates,
            sampled_at,
        })
    }

    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn correct_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.correct).count()
    }

    pub fn unique_correct(&self) -> usize {
        unique_correct(self.candidates.iter())
    }

    fn check_s(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.k() {
            return Err(Error::Argument(format!("s = {s} outside [1, k = {}]", self.k())));
        }
        Ok(())
    }
}

/// Number of distinct canonical keys among the correct candidates.
pub fn unique_correct<'a>(candidates: impl IntoIterator<Item = &'a Candidate>) -> usize {
    candidates
        .into_iter()
        .filter(|c| c.correct)
        .map(|c| c.response.canonical_key())
        .collect::<HashSet<&[OpToken]>>()
        .len()
}

/// At least `s` unique correct responses in the pool. Pass@K is `s = 1`.
pub fn pass_at_k_s(pool: &CandidatePool, s: usize) -> Result<bool> {
    pool.check_s(s)?;
    Ok(pool.unique_correct() >= s)
}

/// Reward-descending order; ties put correct candidates first, then lower
/// candidate indices (the sort is stable).
pub fn reward_ranking(pool: &CandidatePool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.k()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&pool.candidates[a], &pool.candidates[b]);
        cb.reward
            .total
            .total_cmp(&ca.reward.total)
            .then_with(|| cb.correct.cmp(&ca.correct))
    });
    order
}

/// The top `s` candidates by reward are all correct. Best-of-K is `s = 1`.
pub fn reward_at_k_s(pool: &CandidatePool, s: usize) -> Result<bool> {
    pool.check_s(s)?;
    Ok(reward_ranking(pool)
        .into_iter()
        .take(s)
        .all(|i| pool.candidates[i].correct))
}

/// Unique correct over correct; 0 when nothing is correct.
pub fn diversity<T: Scalar>(pool: &CandidatePool) -> T {
    let correct = pool.correct_count();
    if correct == 0 {
        return T::zero();
    }
    T::of(pool.unique_correct() as f64) / T::of(correct as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceInputs {
    pub n: usize,
    pub n_unique_correct: usize,
    pub n_star: usize,
}

impl BalanceInputs {
    pub fn new(n: usize, n_unique_correct: usize, n_star: usize) -> Result<Self> {
        if n_unique_correct > n {
            return Err(Error::Argument(format!("n' = {n_unique_correct} exceeds n = {n}")));
        }
        if n_star == 0 {
            return Err(Error::Argument("n_star must be >= 1".into()));
        }
        Ok(Self {
            n,
            n_unique_correct,
            n_star,
        })
    }

    /// Counts over the candidates kept at threshold `tau`.
    pub fn from_pool(pool: &CandidatePool, tau: f64, n_star: usize) -> Result<Self> {
        let selected = crate::rewarding::filter(&pool.candidates, tau);
        Self::new(selected.len(), unique_correct(selected), n_star)
    }
}

/// `min(n' / n_star, 1) * n' / n`, and 0 when nothing was selected.
pub fn balance_score<T: Scalar>(b: &BalanceInputs) -> T {
    if b.n == 0 {
        return T::zero();
    }
    let unique = T::of(b.n_unique_correct as f64);
    let discount = (unique / T::of(b.n_star as f64)).min(T::one());
    discount * unique / T::of(b.n as f64)
}

/// Target number of correct responses per query, `ceil(N / M)`.
pub fn n_star(samples_per_iteration: usize, queries_per_iteration: usize) -> Result<usize> {
    if samples_per_iteration == 0 || queries_per_iteration == 0 {
        return Err(Error::Argument(format!(
            "n_star needs N, M >= 1, got N = {samples_per_iteration}, M = {queries_per_iteration}"
        )));
    }
    Ok(samples_per_iteration.div_ceil(queries_per_iteration))
}

/// Mean over pools of the balance score after filtering at `tau`.
pub fn average_balance_score<T: Scalar>(pools: &[CandidatePool], tau: f64, n_star: usize) -> Result<T> {
    if pools.is_empty() {
        return Err(Error::Argument("average_balance_score over zero pools".into()));
    }
    let mut sum = T::zero();
    for pool in pools {
        sum = sum + balance_score::<T>(&BalanceInputs::from_pool(pool, tau, n_star)?);
    }
    Ok(sum / T::of(pools.len() as f64))
}

/// One per-query metric row, as exported to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: u64,
    #[serde(rename = "pass@1")]
    pub pass_at_1: u8,
    #[serde(rename = "pass@K")]
    pub pass_at_k: u8,
    #[serde(rename = "pass@K-S")]
    pub pass_at_k_s: u8,
    #[serde(rename = "reward@K-S")]
    pub reward_at_k_s: u8,
    pub diversity: f64,
    pub balance_score: f64,
}

impl QueryMetrics {
    pub fn compute(pool: &CandidatePool, greedy_correct: bool, s: usize, tau: f64, n_star: usize) -> Result<Self> {
        Ok(Self {
            query_id: pool.query_id,
            pass_at_1: u8::from(greedy_correct),
            pass_at_k: u8::from(pass_at_k_s(pool, 1)?),
            pass_at_k_s: u8::from(pass_at_k_s(pool, s)?),
            reward_at_k_s: u8::from(reward_at_k_s(pool, s)?),
            diversity: diversity(pool),
            balance_score: balance_score(&BalanceInputs::from_pool(pool, tau, n_star)?),
        })
    }
}
