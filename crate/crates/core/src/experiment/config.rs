//! Run configuration: a TOML file with sections, unknown keys rejected.
//!
//! ```toml
//! seed = 7
//! variant = "b_star"
//! iterations = 9
//!
//! [task]
//! train_queries = 1000
//! eval_queries = 1000
//!
//! [sampling]
//! k = 32
//! queries_per_iteration = 500
//! samples_per_iteration = 3000
//!
//! [reward]
//! mode = "answer_plus_prm"
//!
//! [controller]
//! temperatures = { start = 0.5, stop = 1.2, step = 0.1 }
//! thresholds = { start = -1.0, stop = 1.0, step = 0.1 }
//! ```
//!
//! Every omitted key takes the default shown by [`RunConfig::default`]; the
//! resolved configuration written next to a run's artifacts spells out all
//! of them and reproduces the run when fed back in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{self, ConfigGrid, ConfigPoint, GridRange};
use crate::error::{Error, Result};
use crate::metrics;
use crate::optim::{OptimizerConfig, Schedule};
use crate::rewarding::{RewardMode, SimulatedPrm};
use crate::seed;
use crate::task::{default_vocabulary, Op, Task};
use crate::trainer::{EvalSettings, LoopSettings, LoopVariant, RunSeeds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: LoopVariant,
    pub iterations: usize,
    pub task: TaskSection,
    pub sampling: SamplingSection,
    pub reward: RewardSection,
    pub training: TrainingSection,
    pub warmup: WarmupSection,
    pub probe: ProbeSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSection>,
    pub eval: EvalSection,
    pub output: OutputSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub modulus: u32,
    pub vocabulary: Vec<Op>,
    pub max_steps: u32,
    pub train_queries: usize,
    pub eval_queries: usize,
    pub admit_unsolvable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    /// Candidates per query (sample size).
    pub k: usize,
    pub temperature: f64,
    pub threshold: f64,
    /// M: queries drawn per iteration.
    pub queries_per_iteration: usize,
    /// N: target number of selected samples per iteration.
    pub samples_per_iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub mode: RewardMode,
    pub prm_noise: f64,
    pub prm_jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: Schedule,
    pub dedup_selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmupSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub size: usize,
    /// Candidates per probe query; 0 means "same as sampling.k".
    pub k: usize,
    /// Record the probe balance score of fixed configurations too.
    pub measure_fixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub temperatures: GridRange,
    pub thresholds: GridRange,
    /// Use 0.05 / 0.01 steps over the same bounds.
    pub fine: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    pub temperature: f64,
    pub s_values: Vec<usize>,
    /// Seed of the evaluation streams; derived from the master seed when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    EveryIteration,
    Final,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub checkpoints: CheckpointPolicy,
    pub reward_traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub temperatures: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: LoopVariant::OnlineRft,
            iterations: 9,
            task: TaskSection::default(),
            sampling: SamplingSection::default(),
            reward: RewardSection::default(),
            training: TrainingSection::default(),
            warmup: WarmupSection::default(),
            probe: ProbeSection::default(),
            controller: None,
            eval: EvalSection::default(),
            output: OutputSection::default(),
            compare: None,
        }
    }
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            modulus: 97,
            vocabulary: default_vocabulary(),
            max_steps: 6,
            train_queries: 1000,
            eval_queries: 1000,
            admit_unsolvable: false,
        }
    }
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            k: 32,
            temperature: 1.0,
            threshold: 0.0,
            queries_per_iteration: 500,
            samples_per_iteration: 3000,
        }
    }
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            mode: RewardMode::AnswerOnly,
            prm_noise: 0.1,
            prm_jitter: 0.5,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            steps_per_iteration: 500,
            batch_size: 128,
            learning_rate: 1.0,
            momentum: 0.9,
            schedule: Schedule::Constant,
            dedup_selected: false,
        }
    }
}

impl Default for WarmupSection {
    fn default() -> Self {
        Self {
            steps: 30,
            batch_size: 64,
            learning_rate: 0.5,
            momentum: 0.9,
        }
    }
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            size: 600,
            k: 0,
            measure_fixed: true,
        }
    }
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            temperatures: controller::TEMPERATURES,
            thresholds: controller::THRESHOLDS,
            fine: false,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k: 32,
            temperature: 1.0,
            s_values: vec![4],
            seed: None,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            checkpoints: CheckpointPolicy::EveryIteration,
            reward_traces: false,
        }
    }
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            temperatures: vec![0.5, 0.7, 0.9, 1.1],
            thresholds: vec![-0.4, -0.2, 0.0, 0.2, 0.4],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl CompareSection {
    pub fn points(&self) -> Vec<ConfigPoint> {
        self.temperatures
            .iter()
            .flat_map(|&t| self.thresholds.iter().map(move |&tau| ConfigPoint::new(t, tau)))
            .collect()
    }
}

/// Line of `[section]` or of `key = ...` inside it, 1-based.
fn locate(source: &str, section: Option<&str>, key: Option<&str>) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut section_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            if section == Some(name.trim()) {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current.as_deref() == section {
            if let Some(key) = key {
                let lhs = line.split('=').next().unwrap_or("").trim();
                if line.contains('=') && lhs == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

impl RunConfig {
    pub fn from_toml(source: &str, origin: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(source).map_err(|e| {
            let line = e
                .span()
                .map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1);
            match line {
                Some(l) => Error::Config(format!("{origin}:{l}: {}", e.message())),
                None => Error::Config(format!("{origin}: {}", e.message())),
            }
        })?;
        config.validate().map_err(|(section, key, msg)| {
            let where_ = locate(source, section, key)
                .map(|l| format!("{origin}:{l}"))
                .unwrap_or_else(|| origin.to_string());
            Error::Config(format!("{where_}: {msg}"))
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&source, &path.display().to_string())
    }

    /// Fully resolved TOML; parsing it yields an identical configuration.
    pub fn to_toml(&self) -> String {
        let mut resolved = self.clone();
        resolved.eval.seed = Some(self.eval_seed());
        let body = toml::to_string(&resolved).expect("config serializes");
        let n_star = self.n_star().map(|n| n.to_string()).unwrap_or_else(|_| "invalid".into());
        format!("# resolved configuration; n_star = ceil(N / M) = {n_star}\n{body}")
    }

    pub fn n_star(&self) -> Result<usize> {
        metrics::n_star(self.sampling.samples_per_iteration, self.sampling.queries_per_iteration)
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or_else(|| RunSeeds::from_master(self.seed).eval)
    }

    pub fn seeds(&self) -> RunSeeds {
        RunSeeds {
            master: self.seed,
            eval: self.eval_seed(),
        }
    }

    pub fn task_seed(&self) -> u64 {
        seed::derive(self.seed, "task", 0)
    }

    pub fn build_task(&self) -> Result<Task> {
        Task::new(self.task.modulus, self.task.vocabulary.clone(), self.task.max_steps)
    }

    pub fn grid(&self) -> Result<Option<ConfigGrid>> {
        self.controller
            .as_ref()
            .map(|c| {
                if c.fine {
                    ConfigGrid::from_ranges(
                        GridRange {
                            step: controller::FINE_TEMPERATURE_STEP,
                            ..c.temperatures
                        },
                        GridRange {
                            step: controller::FINE_THRESHOLD_STEP,
                            ..c.thresholds
                        },
                    )
                } else {
                    ConfigGrid::from_ranges(c.temperatures, c.thresholds)
                }
            })
            .transpose()
    }

    pub fn prm(&self) -> Result<SimulatedPrm> {
        SimulatedPrm::new(self.reward.prm_noise, self.reward.prm_jitter, seed::derive(self.seed, "prm", 0))
    }

    pub fn probe_k(&self) -> usize {
        if self.probe.k == 0 {
            self.sampling.k
        } else {
            self.probe.k
        }
    }

    pub fn loop_settings(&self) -> Result<LoopSettings> {
        Ok(LoopSettings {
            variant: self.variant,
            k: self.sampling.k,
            fixed: ConfigPoint::new(self.sampling.temperature, self.sampling.threshold),
            grid: self.grid()?,
            probe_k: self.probe_k(),
            n_star: self.n_star()?,
            steps_per_iteration: self.training.steps_per_iteration,
            batch_size: self.training.batch_size,
            dedup_selected: self.training.dedup_selected,
            measure_probe: self.probe.measure_fixed,
            collect_traces: self.output.reward_traces,
            optimizer: OptimizerConfig {
                learning_rate: self.training.learning_rate,
                momentum: self.training.momentum,
                schedule: self.training.schedule,
            },
            eval: EvalSettings {
                k: self.eval.k,
                temperature: self.eval.temperature,
                s_values: self.eval.s_values.clone(),
            },
        })
    }

    pub fn warmup_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.warmup.learning_rate,
            momentum: self.warmup.momentum,
            schedule: Schedule::Constant,
        }
    }

    /// Checks cross-field constraints. Errors carry `(section, key, message)`
    /// so they can be anchored to a line of the source.
    fn validate(&self) -> std::result::Result<(), (Option<&'static str>, Option<&'static str>, String)> {
        let top = |key: &'static str, msg: String| (None, Some(key), msg);
        let at = |section: &'static str, key: &'static str, msg: String| (Some(section), Some(key), msg);
        if self.variant == LoopVariant::BStar && self.controller.is_none() {
            return Err(top(
                "variant",
                "missing field `controller`: variant \"b_star\" requires a [controller] grid section".into(),
            ));
        }
        if let Err(e) = self.build_task() {
            return Err((Some("task"), None, e.to_string()));
        }
        if self.task.train_queries == 0 {
            return Err(at("task", "train_queries", "train_queries must be >= 1".into()));
        }
        if self.task.eval_queries == 0 {
            return Err(at("task", "eval_queries", "eval_queries must be >= 1".into()));
        }
        if self.sampling.k == 0 {
            return Err(at("sampling", "k", "k must be >= 1".into()));
        }
        if !(self.sampling.temperature > 0.0) {
            return Err(at("sampling", "temperature", "temperature must be > 0".into()));
        }
        if self.sampling.queries_per_iteration == 0 {
            return Err(at("sampling", "queries_per_iteration", "queries_per_iteration must be >= 1".into()));
        }
        if self.sampling.samples_per_iteration == 0 {
            return Err(at("sampling", "samples_per_iteration", "samples_per_iteration must be >= 1".into()));
        }
        if let Err(e) = self.prm() {
            return Err(at("reward", "prm_noise", e.to_string()));
        }
        if self.training.batch_size == 0 {
            return Err(at("training", "batch_size", "batch_size must be >= 1".into()));
        }
        let opt = OptimizerConfig {
            learning_rate: self.training.learning_rate,
            momentum: self.training.momentum,
            schedule: self.training.schedule,
        };
        if let Err(e) = opt.validate() {
            return Err((Some("training"), None, e.to_string()));
        }
        if self.warmup.steps > 0 {
            if self.warmup.batch_size == 0 {
                return Err(at("warmup", "batch_size", "batch_size must be >= 1".into()));
            }
            if let Err(e) = self.warmup_optimizer().validate() {
                return Err((Some("warmup"), None, e.to_string()));
            }
        }
        if self.probe.size == 0 {
            return Err(at("probe", "size", "probe size must be >= 1".into()));
        }
        if let Err(e) = self.grid() {
            return Err((Some("controller"), None, e.to_string()));
        }
        if self.eval.k == 0 {
            return Err(at("eval", "k", "k must be >= 1".into()));
        }
        if !(self.eval.temperature > 0.0) {
            return Err(at("eval", "temperature", "temperature must be > 0".into()));
        }
        if let Some(&s) = self.eval.s_values.iter().find(|&&s| s == 0 || s > self.eval.k) {
            return Err(at("eval", "s_values", format!("s = {s} outside [1, eval.k = {}]", self.eval.k)));
        }
        if let Some(c) = &self.compare {
            if c.seeds.is_empty() {
                return Err(at("compare", "seeds", "compare needs at least one seed".into()));
            }
            if c.temperatures.iter().any(|&t| !(t > 0.0)) {
                return Err(at("compare", "temperatures", "temperatures must be > 0".into()));
            }
        }
        Ok(())
    }
}
