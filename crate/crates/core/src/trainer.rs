//! Self-improvement loop variants.
//!
//! Every iteration generates candidates with the current policy, scores and
//! filters them, then improves the policy on the selected set. The variants
//! differ only in what they carry across iteration boundaries:
//!
//! | variant         | policy at training start | optimizer / schedule |
//! |-----------------|--------------------------|----------------------|
//! | `sft`           | previous                 | carried              |
//! | `rest_em`       | initial snapshot         | reset                |
//! | `iterative_rft` | previous                 | reset                |
//! | `online_rft`    | previous                 | carried              |
//! | `b_star`        | previous                 | carried              |
//!
//! `sft` trains on oracle solutions instead of sampled ones; `b_star`
//! additionally chooses temperature and threshold per iteration through
//! [`controller::search`].

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::controller::{self, ConfigGrid, ConfigPoint, SearchResult};
use crate::error::{Error, Result};
use crate::metrics::{self, BalanceInputs, CandidatePool, QueryMetrics};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::policy::{Example, PolicyParams, PolicySnapshot};
use crate::rewarding::{Reward, RewardMode, RewardTrace};
use crate::rollout::generate_pools;
use crate::scalar::Scalar;
use crate::seed;
use crate::task::{OpToken, Query, Response, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopVariant {
    Sft,
    RestEm,
    IterativeRft,
    OnlineRft,
    BStar,
}

impl LoopVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            LoopVariant::Sft => "sft",
            LoopVariant::RestEm => "rest_em",
            LoopVariant::IterativeRft => "iterative_rft",
            LoopVariant::OnlineRft => "online_rft",
            LoopVariant::BStar => "b_star",
        }
    }

    pub fn carries_optimizer(&self) -> bool {
        matches!(self, LoopVariant::Sft | LoopVariant::OnlineRft | LoopVariant::BStar)
    }
}

impl std::str::FromStr for LoopVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sft" => LoopVariant::Sft,
            "rest_em" => LoopVariant::RestEm,
            "iterative_rft" => LoopVariant::IterativeRft,
            "online_rft" => LoopVariant::OnlineRft,
            "b_star" => LoopVariant::BStar,
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub k: usize,
    pub temperature: f64,
    pub s_values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopSettings {
    pub variant: LoopVariant,
    /// Candidates per query.
    pub k: usize,
    /// Configuration used by every variant except `b_star`.
    pub fixed: ConfigPoint,
    pub grid: Option<ConfigGrid>,
    pub probe_k: usize,
    pub n_star: usize,
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    /// Drop repeated `(query, response)` pairs from the selected set.
    pub dedup_selected: bool,
    /// Measure the probe balance score of the fixed configuration for
    /// variants that do not search.
    pub measure_probe: bool,
    /// Keep per-candidate reward traces of each iteration's pools.
    pub collect_traces: bool,
    pub optimizer: OptimizerConfig,
    pub eval: EvalSettings,
}

impl LoopSettings {
    pub fn validate(&self) -> Result<()> {
        if self.variant == LoopVariant::BStar && self.grid.is_none() {
            return Err(Error::Config("variant b_star requires a controller grid".into()));
        }
        if self.k == 0 || self.probe_k == 0 || self.eval.k == 0 {
            return Err(Error::Config("sample sizes must be >= 1".into()));
        }
        if self.n_star == 0 {
            return Err(Error::Config("n_star must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.fixed.temperature > 0.0) || !(self.eval.temperature > 0.0) {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        if let Some(&s) = self.eval.s_values.iter().find(|&&s| s == 0 || s > self.eval.k) {
            return Err(Error::Config(format!("eval s = {s} outside [1, eval k = {}]", self.eval.k)));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassAtKS {
    pub s: usize,
    pub pass: f64,
    pub reward: f64,
}

/// Dataset-level evaluation: means of per-query indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub queries: usize,
    pub k: usize,
    pub temperature: f64,
    pub pass_at_1: f64,
    pub pass_at_k: f64,
    pub at_s: Vec<PassAtKS>,
    /// Mean over pools with at least one correct candidate.
    pub diversity: f64,
    /// Pools excluded from `diversity` for having no correct candidate.
    pub zero_correct_pools: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub sample: u64,
    pub probe: u64,
    pub minibatch: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub variant: LoopVariant,
    pub config: ConfigPoint,
    pub queries_drawn: usize,
    pub candidates: usize,
    /// Selected responses summed over queries (n).
    pub selected: usize,
    /// Unique correct selected responses summed over queries (n').
    pub selected_unique_correct: usize,
    pub selected_correct: usize,
    /// Average balance score of this iteration's draw at `config`.
    pub mean_balance_score: f64,
    /// Average balance score on the probe set at `config`, before training.
    pub probe_balance_score: Option<f64>,
    pub starved: bool,
    pub optimizer_steps: u64,
    pub policy_version: u64,
    pub eval: EvalMetrics,
    pub seeds: SeedRecord,
    #[serde(skip)]
    pub wall_time_ms: u128,
}

/// Everything an iteration produced besides the updated state.
#[derive(Clone, Debug)]
pub struct IterationOutput {
    pub stats: IterationStats,
    pub search: Option<SearchResult>,
    /// Training examples, as `(query id, response)`.
    pub selected: Vec<(u64, Response)>,
    pub eval_rows: Vec<QueryMetrics>,
    /// Filled when [`LoopSettings::collect_traces`] is set.
    pub traces: Vec<RewardTrace>,
}

/// Runs the minibatch updates of one iteration. Returns the number of steps
/// taken (0 when `selected` is empty).
pub fn improve<T: Scalar>(
    task: &Task,
    policy: &mut PolicyParams<T>,
    optimizer: &mut OptimizerState<T>,
    selected: &[(&Query, &Response)],
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<usize> {
    if selected.is_empty() {
        return Ok(0);
    }
    let mut rng = seed::stream(seed, "minibatch", 0);
    let mut order: Vec<usize> = (0..selected.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..steps {
        batch.clear();
        while batch.len() < batch_size.min(selected.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (query, response) = selected[order[cursor]];
            batch.push(Example {
                query,
                response,
                weight: 1.0,
            });
            cursor += 1;
        }
        policy.update(task, &batch, optimizer)?;
    }
    Ok(steps)
}

/// Supervised warm-up on oracle solutions of randomly chosen training
/// queries, with its own optimizer.
pub fn warm_up<T: Scalar>(
    task: &Task,
    train: &[Query],
    optimizer: OptimizerConfig,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<PolicyParams<T>> {
    let mut policy = PolicyParams::zeros(task);
    if steps == 0 {
        return Ok(policy);
    }
    let solvable: Vec<&Query> = train.iter().filter(|q| q.solvable).collect();
    if solvable.is_empty() {
        return Err(Error::Config("warm-up needs at least one solvable training query".into()));
    }
    let mut opt = policy.new_optimizer(optimizer);
    let mut rng = seed::stream(seed, "warmup", 0);
    for _ in 0..steps {
        let data: Vec<(&Query, Response)> = (0..batch_size)
            .map(|_| {
                let q = solvable[rng.gen_range(0..solvable.len())];
                (q, task.oracle_response(q, &mut rng).expect("solvable query"))
            })
            .collect();
        let batch: Vec<Example> = data
            .iter()
            .map(|(query, response)| Example {
                query,
                response,
                weight: 1.0,
            })
            .collect();
        policy.update(task, &batch, &mut opt)?;
    }
    Ok(policy)
}

/// Greedy Pass@1 plus pool metrics on `queries`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Scalar>(
    task: &Task,
    policy: &PolicyParams<T>,
    reward: &Reward,
    queries: &[Query],
    settings: &EvalSettings,
    tau: f64,
    n_star: usize,
    seed: u64,
) -> Result<(EvalMetrics, Vec<QueryMetrics>)> {
    if queries.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let at = ConfigPoint::new(settings.temperature, tau);
    let pools = generate_pools(task, policy, reward, queries, at, settings.k, seed)?;
    let greedy: Vec<bool> = queries
        .iter()
        .map(|q| task.verify(q, &policy.greedy(task, q)?))
        .collect::<Result<_>>()?;
    let n = queries.len() as f64;
    let pass_at_1 = greedy.iter().filter(|&&g| g).count() as f64 / n;
    let mut pass_at_k = 0.0;
    let mut at_s: Vec<PassAtKS> = settings
        .s_values
        .iter()
        .map(|&s| PassAtKS {
            s,
            pass: 0.0,
            reward: 0.0,
        })
        .collect();
    let mut diversity_sum = 0.0;
    let mut zero_correct = 0;
    for pool in &pools {
        pass_at_k += f64::from(u8::from(metrics::pass_at_k_s(pool, 1)?));
        for entry in &mut at_s {
            entry.pass += f64::from(u8::from(metrics::pass_at_k_s(pool, entry.s)?));
            entry.reward += f64::from(u8::from(metrics::reward_at_k_s(pool, entry.s)?));
        }
        if pool.correct_count() == 0 {
            zero_correct += 1;
        } else {
            diversity_sum += metrics::diversity::<f64>(pool);
        }
    }
    for entry in &mut at_s {
        entry.pass /= n;
        entry.reward /= n;
    }
    let with_correct = pools.len() - zero_correct;
    let diversity = if with_correct == 0 {
        0.0
    } else {
        diversity_sum / with_correct as f64
    };
    let row_s = settings.s_values.first().copied().unwrap_or(1);
    let rows = pools
        .iter()
        .zip(&greedy)
        .map(|(pool, &g)| QueryMetrics::compute(pool, g, row_s, tau, n_star))
        .collect::<Result<_>>()?;
    Ok((
        EvalMetrics {
            queries: queries.len(),
            k: settings.k,
            temperature: settings.temperature,
            pass_at_1,
            pass_at_k: pass_at_k / n,
            at_s,
            diversity,
            zero_correct_pools: zero_correct,
        },
        rows,
    ))
}

/// Seeds a run draws from, all derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub eval: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            eval: seed::derive(master, "eval", 0),
        }
    }

    fn iteration(&self, i: usize) -> SeedRecord {
        let i = i as u64;
        SeedRecord {
            sample: seed::derive(self.master, "sample", i),
            probe: seed::derive(self.master, "probe", i),
            minibatch: seed::derive(self.master, "minibatch", i),
            eval: seed::derive(self.eval, "eval-iteration", i),
        }
    }
}

/// Iteration engine holding the policy, optimizer and query streams.
pub struct Trainer<'a, T: Scalar> {
    task: &'a Task,
    reward: Reward,
    settings: LoopSettings,
    train: &'a [Query],
    probe: Vec<Query>,
    eval: &'a [Query],
    seeds: RunSeeds,
    initial: PolicySnapshot<T>,
    policy: PolicyParams<T>,
    optimizer: OptimizerState<T>,
    iteration: usize,
    draw_order: Vec<usize>,
    draw_cursor: usize,
    draw_epoch: u64,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: &'a Task,
        reward: Reward,
        settings: LoopSettings,
        train: &'a [Query],
        probe: Vec<Query>,
        eval: &'a [Query],
        seeds: RunSeeds,
        initial: PolicyParams<T>,
    ) -> Result<Self> {
        settings.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if probe.is_empty() && (settings.variant == LoopVariant::BStar || settings.measure_probe) {
            return Err(Error::Config("probe set is empty".into()));
        }
        let optimizer = initial.new_optimizer(settings.optimizer);
        Ok(Self {
            task,
            reward,
            settings,
            train,
            probe,
            eval,
            seeds,
            initial: initial.snapshot(),
            policy: initial,
            optimizer,
            iteration: 0,
            draw_order: Vec::new(),
            draw_cursor: 0,
            draw_epoch: 0,
        })
    }

    pub fn policy(&self) -> &PolicyParams<T> {
        &self.policy
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.optimizer
    }

    pub fn initial(&self) -> &PolicySnapshot<T> {
        &self.initial
    }

    pub fn settings(&self) -> &LoopSettings {
        &self.settings
    }

    pub fn iterations_done(&self) -> usize {
        self.iteration
    }

    pub fn into_policy(self) -> PolicyParams<T> {
        self.policy
    }

    /// Next `m` training queries, without replacement within an epoch.
    pub fn draw(&mut self, m: usize) -> Vec<Query> {
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            if self.draw_cursor == self.draw_order.len() {
                self.draw_order = (0..self.train.len()).collect();
                self.draw_order
                    .shuffle(&mut seed::stream(self.seeds.master, "draw-epoch", self.draw_epoch));
                self.draw_epoch += 1;
                self.draw_cursor = 0;
            }
            out.push(self.train[self.draw_order[self.draw_cursor]].clone());
            self.draw_cursor += 1;
        }
        out
    }

    pub fn evaluate_current(&self, seed: u64) -> Result<(EvalMetrics, Vec<QueryMetrics>)> {
        evaluate(
            self.task,
            &self.policy,
            &self.reward,
            self.eval,
            &self.settings.eval,
            self.settings.fixed.threshold,
            self.settings.n_star,
            seed,
        )
    }

    fn resolve_config(&self, seeds: &SeedRecord) -> Result<(ConfigPoint, Option<f64>, Option<SearchResult>)> {
        let s = &self.settings;
        if s.variant == LoopVariant::BStar {
            let grid = s.grid.as_ref().expect("validated");
            let result = controller::search(
                self.task,
                &self.policy,
                &self.reward,
                &self.probe,
                grid,
                s.probe_k,
                s.n_star,
                seeds.probe,
            )?;
            return Ok((result.best, Some(result.score), Some(result)));
        }
        let probe_score = if s.measure_probe {
            Some(controller::measure(
                self.task,
                &self.policy,
                &self.reward,
                &self.probe,
                s.fixed,
                s.probe_k,
                s.n_star,
                seeds.probe,
            )?)
        } else {
            None
        };
        Ok((s.fixed, probe_score, None))
    }

    fn oracle_pools(&self, draw: &[Query], at: ConfigPoint, seed: u64) -> Result<Vec<CandidatePool>> {
        draw.iter()
            .map(|q| {
                let mut rng = seed::stream(seed, "oracle", q.id);
                let candidates = (0..self.settings.k)
                    .filter_map(|_| self.task.oracle_response(q, &mut rng))
                    .map(|response| metrics::Candidate {
                        response,
                        reward: crate::rewarding::RewardScore::answer_only(true),
                        correct: true,
                    })
                    .collect::<Vec<_>>();
                if candidates.is_empty() {
                    // Unsolvable query: no supervised data.
                    return Ok(None);
                }
                CandidatePool::new(q.id, candidates, at).map(Some)
            })
            .filter_map(Result::transpose)
            .collect()
    }

    /// One generate / reward / improve cycle on `draw`.
    pub fn run_iteration(&mut self, draw: &[Query]) -> Result<IterationOutput> {
        if draw.is_empty() {
            return Err(Error::Argument("iteration needs at least one query".into()));
        }
        let started = Instant::now();
        let index = self.iteration + 1;
        let seeds = self.seeds.iteration(index);
        let (config, probe_balance_score, search) = self.resolve_config(&seeds)?;

        let pools = if self.settings.variant == LoopVariant::Sft {
            self.oracle_pools(draw, config, seeds.sample)?
        } else {
            generate_pools(self.task, &self.policy, &self.reward, draw, config, self.settings.k, seeds.sample)?
        };

        let mut selected: Vec<(u64, Response)> = Vec::new();
        let mut totals = (0usize, 0usize, 0usize);
        let mut balance_sum = 0.0;
        let mut seen: HashSet<(u64, Vec<OpToken>)> = HashSet::new();
        for pool in &pools {
            let kept = crate::rewarding::filter(&pool.candidates, config.threshold);
            let inputs = BalanceInputs::new(kept.len(), metrics::unique_correct(kept.iter().copied()), self.settings.n_star)?;
            balance_sum += metrics::balance_score::<f64>(&inputs);
            totals.0 += inputs.n;
            totals.1 += inputs.n_unique_correct;
            totals.2 += kept.iter().filter(|c| c.correct).count();
            for c in kept {
                if self.settings.dedup_selected && !seen.insert((pool.query_id, c.response.steps.clone())) {
                    continue;
                }
                selected.push((pool.query_id, c.response.clone()));
            }
        }
        let mean_balance_score = if pools.is_empty() {
            0.0
        } else {
            balance_sum / pools.len() as f64
        };

        let traces = if self.settings.collect_traces {
            pools
                .iter()
                .flat_map(|pool| {
                    pool.candidates.iter().enumerate().map(|(i, c)| RewardTrace {
                        query_id: pool.query_id,
                        candidate_index: i,
                        answer_part: c.reward.answer_part,
                        prm_part: c.reward.prm_part,
                        total: c.reward.total,
                    })
                })
                .collect()
        } else {
            Vec::new()
        };

        let starved = selected.is_empty();
        if starved {
            log::warn!("iteration {index}: no responses selected at {config:?}; training skipped");
        } else {
            match self.settings.variant {
                LoopVariant::RestEm => {
                    self.policy.restore(&self.initial)?;
                    self.optimizer.reset();
                }
                LoopVariant::IterativeRft => self.optimizer.reset(),
                LoopVariant::Sft | LoopVariant::OnlineRft | LoopVariant::BStar => {}
            }
            let by_id: std::collections::HashMap<u64, &Query> = draw.iter().map(|q| (q.id, q)).collect();
            let examples: Vec<(&Query, &Response)> = selected.iter().map(|(id, r)| (by_id[id], r)).collect();
            improve(
                self.task,
                &mut self.policy,
                &mut self.optimizer,
                &examples,
                self.settings.steps_per_iteration,
                self.settings.batch_size,
                seeds.minibatch,
            )?;
        }

        let (eval, eval_rows) = self.evaluate_current(seeds.eval)?;
        self.iteration = index;
        let stats = IterationStats {
            iteration: index,
            variant: self.settings.variant,
            config,
            queries_drawn: draw.len(),
            candidates: pools.iter().map(CandidatePool::k).sum(),
            selected: totals.0,
            selected_unique_correct: totals.1,
            selected_correct: totals.2,
            mean_balance_score,
            probe_balance_score,
            starved,
            optimizer_steps: self.optimizer.step(),
            policy_version: self.policy.version(),
            eval,
            seeds,
            wall_time_ms: started.elapsed().as_millis(),
        };
        Ok(IterationOutput {
            stats,
            search,
            selected,
            eval_rows,
            traces,
        })
    }
}

pub fn reward_from(mode: RewardMode, prm: crate::rewarding::SimulatedPrm) -> Reward {
    match mode {
        RewardMode::AnswerOnly => Reward::AnswerOnly,
        RewardMode::AnswerPlusPrm => Reward::AnswerPlusPrm(prm),
    }
}
