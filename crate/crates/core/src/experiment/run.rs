//! Seeded run orchestration and the run-directory layout.
//!
//! ```text
//! <out>/
//!   manifest.json          written last; lists every other file
//!   resolved_config.toml
//!   queries_train.jsonl    {id, start, target, max_steps} per line
//!   queries_eval.jsonl
//!   probe.json
//!   warmup.json            evaluation of the warm-up policy
//!   stats.jsonl            one IterationStats record per iteration
//!   timings.jsonl          wall-clock per iteration (not deterministic)
//!   query_metrics.csv      final per-query evaluation rows
//!   controller_scores.csv  b_star only
//!   checkpoints/iter_NNN.bin
//!   traces/iter_NNN.jsonl  when output.reward_traces is set
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{CheckpointPolicy, RunConfig};
use crate::controller::{score_table_export, ProbeSet, ScoreRow};
use crate::error::{Error, Result};
use crate::metrics::QueryMetrics;
use crate::policy::PolicyParams;
use crate::rewarding::Reward;
use crate::seed;
use crate::task::{generate_with, Query, QueryRecord, Task};
use crate::trainer::{self, EvalMetrics, IterationOutput, IterationStats, Trainer};
use crate::Policy;

pub const MANIFEST: &str = "manifest.json";
pub const STATS: &str = "stats.jsonl";
pub const SCORES: &str = "controller_scores.csv";
pub const MANIFEST_FORMAT: &str = "bstar-run/1";

/// Task, query splits, probe set and reward model of a configuration.
pub struct Setup {
    pub task: Task,
    pub train: Vec<Query>,
    pub eval: Vec<Query>,
    pub probe_set: ProbeSet,
    pub probe: Vec<Query>,
    pub reward: Reward,
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let task = config.build_task()?;
        let t = &config.task;
        let all = generate_with(
            &task,
            t.train_queries + t.eval_queries,
            t.max_steps,
            config.task_seed(),
            t.admit_unsolvable,
        )?;
        let (train, eval) = all.split_at(t.train_queries);
        let probe_set = ProbeSet::select(train, config.probe.size, seed::derive(config.seed, "probe-set", 0))?;
        let probe = probe_set.queries(train)?;
        Ok(Self {
            reward: trainer::reward_from(config.reward.mode, config.prm()?),
            task,
            train: train.to_vec(),
            eval: eval.to_vec(),
            probe_set,
            probe,
        })
    }

    pub fn warm_up(&self, config: &RunConfig) -> Result<Policy> {
        trainer::warm_up(
            &self.task,
            &self.train,
            config.warmup_optimizer(),
            config.warmup.steps,
            config.warmup.batch_size,
            seed::derive(config.seed, "warmup", 0),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub variant: String,
    pub seed: u64,
    pub iterations: usize,
    pub n_star: usize,
    pub final_pass_at_1: f64,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Timing {
    iteration: usize,
    wall_time_ms: u128,
}

/// In-memory result of a run.
#[derive(Debug)]
pub struct RunOutput {
    pub n_star: usize,
    pub warmup_eval: EvalMetrics,
    pub iterations: Vec<IterationOutput>,
    /// Per-query rows of the last evaluation (warm-up when I = 0).
    pub final_rows: Vec<QueryMetrics>,
    pub final_policy: Policy,
}

impl RunOutput {
    pub fn stats(&self) -> impl Iterator<Item = &IterationStats> {
        self.iterations.iter().map(|o| &o.stats)
    }

    pub fn final_eval(&self) -> &EvalMetrics {
        self.iterations.last().map(|o| &o.stats.eval).unwrap_or(&self.warmup_eval)
    }

    pub fn score_rows(&self) -> Vec<ScoreRow> {
        self.iterations
            .iter()
            .filter_map(|o| o.search.as_ref().map(|s| score_table_export(o.stats.iteration, s)))
            .flatten()
            .collect()
    }

    /// Mean probe balance score over iterations, when measured.
    pub fn mean_probe_balance(&self) -> Option<f64> {
        let scores: Vec<f64> = self.stats().filter_map(|s| s.probe_balance_score).collect();
        (!scores.is_empty() && scores.len() == self.iterations.len())
            .then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Sequential writer of a run directory that keeps track of the manifest.
struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(path)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn jsonl<T: Serialize>(&mut self, rel: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut buf = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut buf, &row)?;
            buf.push(b'\n');
        }
        self.write(rel, &buf)
    }

    fn csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let path = self.path(rel)?;
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&mut self, iteration: usize, policy: &Policy) -> Result<()> {
        let path = self.path(&format!("checkpoints/iter_{iteration:03}.bin"))?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        policy.write_checkpoint(&mut w).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn finish(mut self, manifest: &mut Manifest) -> Result<()> {
        self.files.sort();
        manifest.files = self.files.clone();
        let body = serde_json::to_vec_pretty(manifest)?;
        self.write(MANIFEST, &body)
    }
}

/// Executes warm-up and `config.iterations` iterations. When `out` is given
/// the run directory is written as the run progresses.
pub fn run_experiment(config: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    let setup = Setup::new(config)?;
    let initial = setup.warm_up(config)?;
    run_from(config, &setup, initial, out)
}

/// Like [`run_experiment`] with an already prepared setup and initial policy.
pub fn run_from(config: &RunConfig, setup: &Setup, initial: Policy, out: Option<&Path>) -> Result<RunOutput> {
    let settings = config.loop_settings()?;
    let n_star = settings.n_star;
    let mut dir = out.map(RunDir::create).transpose()?;
    if let Some(d) = dir.as_mut() {
        d.write("resolved_config.toml", config.to_toml().as_bytes())?;
        d.jsonl("queries_train.jsonl", setup.train.iter().map(QueryRecord::from))?;
        d.jsonl("queries_eval.jsonl", setup.eval.iter().map(QueryRecord::from))?;
        d.write("probe.json", &serde_json::to_vec_pretty(&setup.probe_set)?)?;
        if config.output.checkpoints == CheckpointPolicy::EveryIteration {
            d.checkpoint(0, &initial)?;
        }
    }

    let mut trainer = Trainer::new(
        &setup.task,
        setup.reward.clone(),
        settings,
        &setup.train,
        setup.probe.clone(),
        &setup.eval,
        config.seeds(),
        initial,
    )?;
    let (warmup_eval, warmup_rows) = trainer.evaluate_current(seed::derive(config.eval_seed(), "eval-iteration", 0))?;
    log::info!(
        "seed {} {}: warm-up pass@1 {:.4} diversity {:.4}",
        config.seed,
        config.variant.as_str(),
        warmup_eval.pass_at_1,
        warmup_eval.diversity
    );
    if let Some(d) = dir.as_mut() {
        d.write("warmup.json", &serde_json::to_vec_pretty(&warmup_eval)?)?;
    }

    let mut iterations = Vec::with_capacity(config.iterations);
    let mut final_rows = warmup_rows;
    for _ in 0..config.iterations {
        let draw = trainer.draw(config.sampling.queries_per_iteration);
        let mut output = trainer.run_iteration(&draw)?;
        let s = &output.stats;
        log::info!(
            "seed {} {} iteration {}: T={} tau={} selected {} pass@1 {:.4} diversity {:.4}",
            config.seed,
            config.variant.as_str(),
            s.iteration,
            s.config.temperature,
            s.config.threshold,
            s.selected,
            s.eval.pass_at_1,
            s.eval.diversity
        );
        if let Some(d) = dir.as_mut() {
            let keep = match config.output.checkpoints {
                CheckpointPolicy::EveryIteration => true,
                CheckpointPolicy::Final => s.iteration == config.iterations,
                CheckpointPolicy::None => false,
            };
            if keep {
                d.checkpoint(s.iteration, trainer.policy())?;
            }
            if config.output.reward_traces {
                d.jsonl(&format!("traces/iter_{:03}.jsonl", s.iteration), &output.traces)?;
            }
        }
        output.traces = Vec::new();
        final_rows = std::mem::take(&mut output.eval_rows);
        iterations.push(output);
    }
    if config.iterations == 0 && config.output.checkpoints == CheckpointPolicy::Final {
        if let Some(d) = dir.as_mut() {
            d.checkpoint(0, trainer.policy())?;
        }
    }

    let output = RunOutput {
        n_star,
        warmup_eval,
        iterations,
        final_rows,
        final_policy: trainer.into_policy(),
    };
    if let Some(mut d) = dir {
        d.jsonl(STATS, output.stats())?;
        d.jsonl(
            "timings.jsonl",
            output.stats().map(|s| Timing {
                iteration: s.iteration,
                wall_time_ms: s.wall_time_ms,
            }),
        )?;
        d.csv("query_metrics.csv", &output.final_rows)?;
        if config.variant == trainer::LoopVariant::BStar {
            d.csv(SCORES, &output.score_rows())?;
        }
        let mut manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            variant: config.variant.as_str().into(),
            seed: config.seed,
            iterations: config.iterations,
            n_star,
            final_pass_at_1: output.final_eval().pass_at_1,
            files: Vec::new(),
        };
        d.finish(&mut manifest)?;
    }
    Ok(output)
}

/// Reads a checkpoint written by a run.
pub fn load_checkpoint(path: &Path) -> Result<Policy> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    PolicyParams::read_checkpoint(std::io::BufReader::new(file))
}
