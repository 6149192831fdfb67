//! Per-iteration configuration search: pick the `(temperature, threshold)`
//! grid point with the highest average balance score on a probe set.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{average_balance_score, CandidatePool};
use crate::policy::PolicyParams;
use crate::rewarding::RewardModel;
use crate::rollout::generate_pools;
use crate::scalar::Scalar;
use crate::seed;
use crate::task::{Query, Task};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub temperature: f64,
    pub threshold: f64,
}

impl ConfigPoint {
    pub fn new(temperature: f64, threshold: f64) -> Self {
        Self {
            temperature,
            threshold,
        }
    }
}

/// Inclusive arithmetic range, rounded to the step's decimal grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridRange {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("grid step must be positive, got {}", self.step)));
        }
        if self.stop < self.start {
            return Err(Error::Config(format!("grid stop {} below start {}", self.stop, self.start)));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| round12(self.start + i as f64 * self.step)).collect())
    }
}

fn round12(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigGrid {
    temperatures: Vec<f64>,
    thresholds: Vec<f64>,
}

pub const TEMPERATURES: GridRange = GridRange {
    start: 0.5,
    stop: 1.2,
    step: 0.1,
};
pub const THRESHOLDS: GridRange = GridRange {
    start: -1.0,
    stop: 1.0,
    step: 0.1,
};
pub const FINE_TEMPERATURE_STEP: f64 = 0.05;
pub const FINE_THRESHOLD_STEP: f64 = 0.01;

impl Default for ConfigGrid {
    /// Temperatures 0.5..=1.2 by 0.1, thresholds -1.0..=1.0 by 0.1.
    fn default() -> Self {
        Self::from_ranges(TEMPERATURES, THRESHOLDS).expect("default grid is valid")
    }
}

impl ConfigGrid {
    pub fn new(temperatures: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        check_axis("temperatures", &temperatures)?;
        check_axis("thresholds", &thresholds)?;
        if let Some(t) = temperatures.iter().find(|&&t| !(t > 0.0)) {
            return Err(Error::Config(format!("grid temperature {t} must be > 0")));
        }
        Ok(Self {
            temperatures,
            thresholds,
        })
    }

    pub fn from_ranges(temperatures: GridRange, thresholds: GridRange) -> Result<Self> {
        Self::new(temperatures.values()?, thresholds.values()?)
    }

    /// Same bounds as the default grid at 0.05 / 0.01 granularity.
    pub fn fine() -> Self {
        Self::from_ranges(
            GridRange {
                step: FINE_TEMPERATURE_STEP,
                ..TEMPERATURES
            },
            GridRange {
                step: FINE_THRESHOLD_STEP,
                ..THRESHOLDS
            },
        )
        .expect("fine grid is valid")
    }

    pub fn singleton(point: ConfigPoint) -> Result<Self> {
        Self::new(vec![point.temperature], vec![point.threshold])
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.temperatures.len() * self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, point: ConfigPoint) -> bool {
        self.temperatures.contains(&point.temperature) && self.thresholds.contains(&point.threshold)
    }
}

fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("grid {name} is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("grid {name} contains a non-finite value")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("grid {name} must be strictly ascending")));
    }
    Ok(())
}

/// Fixed subset of training queries used to measure balance scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub query_ids: Vec<u64>,
    pub seed: u64,
}

impl ProbeSet {
    /// Uniform subset of `size` training queries, ids ascending. Takes the
    /// whole set if it is smaller than `size`.
    pub fn select(train: &[Query], size: usize, seed: u64) -> Result<Self> {
        if size == 0 || train.is_empty() {
            return Err(Error::Config("probe set must be non-empty".into()));
        }
        let mut rng = seed::stream(seed, "probe-select", 0);
        let mut ids: Vec<u64> = index::sample(&mut rng, train.len(), size.min(train.len()))
            .into_iter()
            .map(|i| train[i].id)
            .collect();
        ids.sort_unstable();
        Ok(Self { query_ids: ids, seed })
    }

    /// The probe queries, in id order.
    pub fn queries(&self, train: &[Query]) -> Result<Vec<Query>> {
        self.query_ids
            .iter()
            .map(|id| {
                train
                    .iter()
                    .find(|q| q.id == *id)
                    .cloned()
                    .ok_or_else(|| Error::Integrity(format!("probe query {id} not in the training set")))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub temperature: f64,
    pub threshold: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ConfigPoint,
    pub score: f64,
    /// Temperature-major, both axes ascending.
    pub table: Vec<GridScore>,
}

/// Export row of a score table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub iteration: usize,
    pub temperature: f64,
    pub threshold: f64,
    pub avg_balance_score: f64,
    pub chosen: bool,
}

pub fn score_table_export(iteration: usize, result: &SearchResult) -> Vec<ScoreRow> {
    result
        .table
        .iter()
        .map(|g| ScoreRow {
            iteration,
            temperature: g.temperature,
            threshold: g.threshold,
            avg_balance_score: g.score,
            chosen: g.temperature == result.best.temperature && g.threshold == result.best.threshold,
        })
        .collect()
}

/// Seed of the probe stream at one temperature; shared between grid search
/// and single-point probe measurements.
pub fn probe_seed(seed: u64, temperature: f64) -> u64 {
    seed::derive(seed, "probe-temperature", temperature.to_bits())
}

/// Scores every threshold on pools already sampled per temperature.
///
/// Ties go to the lowest temperature, then the highest threshold.
pub fn search_on_pools<T: Scalar>(
    pools_by_temperature: &[(f64, Vec<CandidatePool>)],
    thresholds: &[f64],
    n_star: usize,
) -> Result<SearchResult> {
    if pools_by_temperature.is_empty() || thresholds.is_empty() {
        return Err(Error::Config("empty configuration grid".into()));
    }
    let mut table = Vec::with_capacity(pools_by_temperature.len() * thresholds.len());
    let mut best: Option<(ConfigPoint, f64)> = None;
    for (temperature, pools) in pools_by_temperature {
        let row: Vec<f64> = thresholds
            .iter()
            .map(|&tau| average_balance_score::<T>(pools, tau, n_star).map(Scalar::as_f64))
            .collect::<Result<_>>()?;
        for (&threshold, &score) in thresholds.iter().zip(&row).rev() {
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((ConfigPoint::new(*temperature, threshold), score));
            }
        }
        table.extend(thresholds.iter().zip(row).map(|(&threshold, score)| GridScore {
            temperature: *temperature,
            threshold,
            score,
        }));
    }
    let (best, score) = best.expect("non-empty grid");
    Ok(SearchResult { best, score, table })
}

/// Probe-set pools at `temperature`, from the probe stream.
pub fn probe_pools<T: Scalar, R: RewardModel + ?Sized>(
    task: &Task,
    policy: &PolicyParams<T>,
    reward: &R,
    probe: &[Query],
    temperature: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<CandidatePool>> {
    // Pools carry the threshold 0 nominally; filtering is applied per τ.
    generate_pools(
        task,
        policy,
        reward,
        probe,
        ConfigPoint::new(temperature, 0.0),
        k,
        probe_seed(seed, temperature),
    )
}

/// Samples `k` candidates per probe query once per temperature and returns
/// the argmax grid point together with the full score table.
#[allow(clippy::too_many_arguments)]
pub fn search<T: Scalar, R: RewardModel + ?Sized>(
    task: &Task,
    policy: &PolicyParams<T>,
    reward: &R,
    probe: &[Query],
    grid: &ConfigGrid,
    k: usize,
    n_star: usize,
    seed: u64,
) -> Result<SearchResult> {
    if probe.is_empty() {
        return Err(Error::Config("probe set is empty".into()));
    }
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    let pools = grid
        .temperatures()
        .iter()
        .map(|&t| Ok((t, probe_pools(task, policy, reward, probe, t, k, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let result = search_on_pools::<T>(&pools, grid.thresholds(), n_star)?;
    log::debug!(
        "controller chose temperature {} threshold {} (score {:.6})",
        result.best.temperature,
        result.best.threshold,
        result.score
    );
    Ok(result)
}

/// Average balance score of a single configuration on the probe set.
#[allow(clippy::too_many_arguments)]
pub fn measure<T: Scalar, R: RewardModel + ?Sized>(
    task: &Task,
    policy: &PolicyParams<T>,
    reward: &R,
    probe: &[Query],
    at: ConfigPoint,
    k: usize,
    n_star: usize,
    seed: u64,
) -> Result<f64> {
    let pools = probe_pools(task, policy, reward, probe, at.temperature, k, seed)?;
    Ok(average_balance_score::<T>(&pools, at.threshold, n_star)?.as_f64())
}
