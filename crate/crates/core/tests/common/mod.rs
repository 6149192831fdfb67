//! Shared fixtures and brute-force reference implementations.
#![allow(dead_code)]

use std::collections::BTreeSet;

use bstar::controller::ConfigPoint;
use bstar::experiment::RunConfig;
use bstar::metrics::{Candidate, CandidatePool};
use bstar::rewarding::RewardScore;
use bstar::task::{Op, OpToken, Response};
use rand::Rng;

/// Random pool with `k` candidates over a small key space so that
/// duplicates and reward ties are common.
pub fn random_pool(rng: &mut impl Rng, id: u64, k: usize) -> CandidatePool {
    let totals = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
    let candidates = (0..k)
        .map(|_| {
            let len = rng.gen_range(1..=3);
            let steps: Vec<OpToken> = (0..len).map(|_| OpToken(rng.gen_range(0..3))).collect();
            let correct = rng.gen_bool(0.5);
            let total = if rng.gen_bool(0.7) {
                totals[rng.gen_range(0..totals.len())]
            } else {
                rng.gen_range(-1.0..2.0)
            };
            Candidate {
                response: Response {
                    steps,
                    final_answer: 0,
                    logprob: 0.0,
                },
                reward: RewardScore {
                    total,
                    answer_part: u8::from(correct),
                    prm_part: None,
                },
                correct,
            }
        })
        .collect();
    CandidatePool::new(id, candidates, ConfigPoint::new(1.0, 0.0)).unwrap()
}

fn key(c: &Candidate) -> Vec<u8> {
    c.response.steps.iter().map(|t| t.0).collect()
}

pub fn ref_unique_correct<'a>(cands: impl IntoIterator<Item = &'a Candidate>) -> usize {
    cands
        .into_iter()
        .filter(|c| c.correct)
        .map(key)
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn ref_pass_at_k_s(pool: &CandidatePool, s: usize) -> bool {
    ref_unique_correct(&pool.candidates) >= s
}

/// Candidate `j` outranks `i`: higher reward, or equal reward and correct
/// over incorrect, or full tie and a lower index.
fn outranks(pool: &CandidatePool, j: usize, i: usize) -> bool {
    let (a, b) = (&pool.candidates[j], &pool.candidates[i]);
    if a.reward.total != b.reward.total {
        return a.reward.total > b.reward.total;
    }
    if a.correct != b.correct {
        return a.correct;
    }
    j < i
}

pub fn ref_reward_at_k_s(pool: &CandidatePool, s: usize) -> bool {
    (0..pool.k())
        .filter(|&i| (0..pool.k()).filter(|&j| j != i && outranks(pool, j, i)).count() < s)
        .all(|i| pool.candidates[i].correct)
}

pub fn ref_diversity(pool: &CandidatePool) -> f64 {
    let correct: Vec<&Candidate> = pool.candidates.iter().filter(|c| c.correct).collect();
    if correct.is_empty() {
        return 0.0;
    }
    // A correct candidate is "first" if no earlier correct one shares its key.
    let firsts = (0..correct.len())
        .filter(|&i| (0..i).all(|j| key(correct[j]) != key(correct[i])))
        .count();
    firsts as f64 / correct.len() as f64
}

pub fn ref_balance(pool: &CandidatePool, tau: f64, n_star: usize) -> f64 {
    let kept: Vec<&Candidate> = pool.candidates.iter().filter(|c| c.reward.total > tau).collect();
    if kept.is_empty() {
        return 0.0;
    }
    let unique = ref_unique_correct(kept.iter().copied()) as f64;
    let quantity = if unique >= n_star as f64 { 1.0 } else { unique / n_star as f64 };
    quantity * unique / kept.len() as f64
}

pub fn ref_average_balance(pools: &[CandidatePool], tau: f64, n_star: usize) -> f64 {
    pools.iter().map(|p| ref_balance(p, tau, n_star)).sum::<f64>() / pools.len() as f64
}

/// Exact probability that uniform sampling with early stopping reaches
/// `target` from `value` within `left` moves.
pub fn uniform_success(ops: &[Op], modulus: u32, value: u32, target: u32, left: u32) -> f64 {
    if value == target {
        return 1.0;
    }
    if left == 0 {
        return 0.0;
    }
    ops.iter()
        .map(|op| uniform_success(ops, modulus, op.apply(value, modulus), target, left - 1))
        .sum::<f64>()
        / ops.len() as f64
}

/// A small configuration that runs in well under a second.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.iterations = 3;
    c.task.train_queries = 300;
    c.task.eval_queries = 100;
    c.sampling.k = 8;
    c.sampling.queries_per_iteration = 100;
    c.sampling.samples_per_iteration = 400;
    c.training.steps_per_iteration = 40;
    c.training.batch_size = 32;
    c.warmup.steps = 20;
    c.probe.size = 100;
    c.eval.k = 8;
    c.eval.s_values = vec![2];
    c
}

pub const TINY_TOML: &str = r#"seed = 5
iterations = 3

[task]
train_queries = 300
eval_queries = 100

[sampling]
k = 8
queries_per_iteration = 100
samples_per_iteration = 400

[training]
steps_per_iteration = 40
batch_size = 32

[warmup]
steps = 20

[probe]
size = 100

[eval]
k = 8
s_values = [2]
"#;

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
