//! Tidy CSV bundles from a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{SCORES, STATS};
use crate::controller::ScoreRow;
use crate::error::{Error, Result};
use crate::trainer::{IterationStats, LoopVariant};

pub const METRICS_CSV: &str = "metrics.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const SCORE_TABLES_CSV: &str = "score_tables.csv";

#[derive(Serialize)]
struct MetricsRow {
    iteration: usize,
    variant: LoopVariant,
    temperature: f64,
    threshold: f64,
    selected: usize,
    selected_unique_correct: usize,
    mean_balance_score: f64,
    probe_balance_score: Option<f64>,
    starved: bool,
    #[serde(rename = "pass@1")]
    pass_at_1: f64,
    #[serde(rename = "pass@K")]
    pass_at_k: f64,
    s: Option<usize>,
    #[serde(rename = "pass@K-S")]
    pass_at_k_s: Option<f64>,
    #[serde(rename = "reward@K-S")]
    reward_at_k_s: Option<f64>,
    diversity: f64,
}

#[derive(Serialize)]
struct TrajectoryRow {
    iteration: usize,
    temperature: f64,
    threshold: f64,
    balance_score: f64,
}

/// Paths written by [`export`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExportBundle {
    pub metrics: PathBuf,
    pub trajectory: PathBuf,
    pub score_tables: Option<PathBuf>,
}

fn read_stats(path: &Path) -> Result<Vec<IterationStats>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifacts(vec![path.to_path_buf()]))?;
    let stats = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<IterationStats>(l)
                .map_err(|e| Error::Integrity(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    if stats.is_empty() {
        return Err(Error::MissingArtifacts(vec![path.to_path_buf()]));
    }
    if stats.iter().enumerate().any(|(i, s)| s.iteration != i + 1) {
        return Err(Error::Integrity(format!("{}: iterations are not numbered 1..", path.display())));
    }
    Ok(stats)
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|_| Error::MissingArtifacts(vec![path.to_path_buf()]))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Integrity(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `metrics.csv`, `trajectory.csv` and, for B-STaR runs,
/// `score_tables.csv` into `out`. Output depends only on the input files.
pub fn export(run_dir: &Path, out: &Path) -> Result<ExportBundle> {
    let stats_path = run_dir.join(STATS);
    if !stats_path.is_file() {
        return Err(Error::MissingArtifacts(vec![stats_path]));
    }
    let stats = read_stats(&stats_path)?;
    let b_star = stats.iter().any(|s| s.variant == LoopVariant::BStar);
    let scores = if b_star {
        let path = run_dir.join(SCORES);
        let rows = read_scores(&path)?;
        for s in &stats {
            let chosen: Vec<&ScoreRow> = rows.iter().filter(|r| r.iteration == s.iteration && r.chosen).collect();
            if chosen.len() != 1 {
                return Err(Error::Integrity(format!(
                    "{}: iteration {} has {} chosen rows",
                    path.display(),
                    s.iteration,
                    chosen.len()
                )));
            }
        }
        Some(rows)
    } else {
        None
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics: Vec<MetricsRow> = stats
        .iter()
        .map(|s| {
            let first = s.eval.at_s.first();
            MetricsRow {
                iteration: s.iteration,
                variant: s.variant,
                temperature: s.config.temperature,
                threshold: s.config.threshold,
                selected: s.selected,
                selected_unique_correct: s.selected_unique_correct,
                mean_balance_score: s.mean_balance_score,
                probe_balance_score: s.probe_balance_score,
                starved: s.starved,
                pass_at_1: s.eval.pass_at_1,
                pass_at_k: s.eval.pass_at_k,
                s: first.map(|a| a.s),
                pass_at_k_s: first.map(|a| a.pass),
                reward_at_k_s: first.map(|a| a.reward),
                diversity: s.eval.diversity,
            }
        })
        .collect();
    let trajectory: Vec<TrajectoryRow> = stats
        .iter()
        .map(|s| TrajectoryRow {
            iteration: s.iteration,
            temperature: s.config.temperature,
            threshold: s.config.threshold,
            balance_score: s.probe_balance_score.unwrap_or(s.mean_balance_score),
        })
        .collect();
    let bundle = ExportBundle {
        metrics: out.join(METRICS_CSV),
        trajectory: out.join(TRAJECTORY_CSV),
        score_tables: scores.as_ref().map(|_| out.join(SCORE_TABLES_CSV)),
    };
    write_csv(&bundle.metrics, &metrics)?;
    write_csv(&bundle.trajectory, &trajectory)?;
    if let (Some(rows), Some(path)) = (&scores, &bundle.score_tables) {
        write_csv(path, rows)?;
    }
    Ok(bundle)
}
