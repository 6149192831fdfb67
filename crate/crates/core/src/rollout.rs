//! Candidate generation and scoring shared by the controller and trainer.

use rayon::prelude::*;

use crate::controller::ConfigPoint;
use crate::error::Result;
use crate::metrics::{Candidate, CandidatePool};
use crate::policy::PolicyParams;
use crate::rewarding::RewardModel;
use crate::scalar::Scalar;
use crate::seed;
use crate::task::{Query, Task};

/// Samples `k` candidates per query at `temperature` and scores them.
///
/// Query `q` draws from the stream `(seed, "query", q.id)`, so pools do not
/// depend on the order or the parallel split of `queries`.
pub fn generate_pools<T: Scalar, R: RewardModel + ?Sized>(
    task: &Task,
    policy: &PolicyParams<T>,
    reward: &R,
    queries: &[Query],
    at: ConfigPoint,
    k: usize,
    seed: u64,
) -> Result<Vec<CandidatePool>> {
    queries
        .par_iter()
        .map(|q| {
            let responses = policy.sample(task, q, at.temperature, k, seed::derive(seed, "query", q.id))?;
            let candidates = responses
                .into_iter()
                .map(|response| {
                    let reward = reward.score(task, q, &response)?;
                    let correct = task.verify(q, &response)?;
                    Ok(Candidate {
                        response,
                        reward,
                        correct,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            CandidatePool::new(q.id, candidates, at)
        })
        .collect()
}
