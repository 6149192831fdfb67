//! Fixed-configuration online RFT against B-STaR over shared seeds.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CheckpointPolicy, CompareSection, RunConfig};
use super::run::{run_from, RunOutput, Setup};
use crate::controller::ConfigPoint;
use crate::error::{Error, Result};
use crate::trainer::LoopVariant;

/// One finished run of the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub variant: LoopVariant,
    /// Fixed point; empty for B-STaR.
    pub temperature: Option<f64>,
    pub threshold: Option<f64>,
    pub warmup_pass_at_1: f64,
    pub final_pass_at_1: f64,
    pub final_pass_at_k: f64,
    pub final_diversity: f64,
    /// Mean over iterations of the probe balance score at the configuration
    /// the run actually used.
    pub mean_balance_score: f64,
}

/// Fixed point scored inside B-STaR's own per-iteration tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedProbeRow {
    pub seed: u64,
    pub temperature: f64,
    pub threshold: f64,
    pub mean_table_score: f64,
    pub b_star_mean_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Seed-major; within a seed, fixed points in grid order then B-STaR.
    pub rows: Vec<CompareRow>,
    pub shared_probe: Vec<SharedProbeRow>,
}

impl Comparison {
    pub fn for_seed(&self, seed: u64) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(move |r| r.seed == seed)
    }
}

fn job_config(base: &RunConfig, seed: u64, point: Option<ConfigPoint>) -> RunConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.eval.seed = None;
    c.compare = None;
    c.output.checkpoints = CheckpointPolicy::None;
    c.output.reward_traces = false;
    c.probe.measure_fixed = true;
    match point {
        Some(p) => {
            c.variant = LoopVariant::OnlineRft;
            c.sampling.temperature = p.temperature;
            c.sampling.threshold = p.threshold;
        }
        None => {
            c.variant = LoopVariant::BStar;
            if c.controller.is_none() {
                c.controller = Some(Default::default());
            }
        }
    }
    c
}

fn row(seed: u64, variant: LoopVariant, point: Option<ConfigPoint>, out: &RunOutput) -> Result<CompareRow> {
    let last = out.final_eval();
    Ok(CompareRow {
        seed,
        variant,
        temperature: point.map(|p| p.temperature),
        threshold: point.map(|p| p.threshold),
        warmup_pass_at_1: out.warmup_eval.pass_at_1,
        final_pass_at_1: last.pass_at_1,
        final_pass_at_k: last.pass_at_k,
        final_diversity: last.diversity,
        mean_balance_score: out
            .mean_probe_balance()
            .ok_or_else(|| Error::Integrity("run recorded no probe balance scores".into()))?,
    })
}

fn shared_probe(seed: u64, points: &[ConfigPoint], b_star: &RunOutput) -> Vec<SharedProbeRow> {
    let iterations = b_star.iterations.len() as f64;
    let chosen = b_star.mean_probe_balance().unwrap_or(0.0);
    points
        .iter()
        .filter_map(|p| {
            let mut sum = 0.0;
            for o in &b_star.iterations {
                let table = &o.search.as_ref()?.table;
                sum += table
                    .iter()
                    .find(|g| g.temperature == p.temperature && g.threshold == p.threshold)?
                    .score;
            }
            Some(SharedProbeRow {
                seed,
                temperature: p.temperature,
                threshold: p.threshold,
                mean_table_score: sum / iterations,
                b_star_mean_score: chosen,
            })
        })
        .collect()
}

/// Runs every fixed point plus B-STaR for every seed. Jobs run in parallel;
/// results are assembled in a fixed order.
pub fn compare(base: &RunConfig, section: &CompareSection, out: Option<&Path>) -> Result<Comparison> {
    if section.seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    if base.iterations == 0 {
        return Err(Error::Config("compare needs at least one iteration".into()));
    }
    let points = section.points();
    let per_seed: Vec<(Vec<CompareRow>, Vec<SharedProbeRow>)> = section
        .seeds
        .par_iter()
        .map(|&seed| {
            let seed_config = job_config(base, seed, None);
            let setup = Setup::new(&seed_config)?;
            let initial = setup.warm_up(&seed_config)?;
            let mut jobs: Vec<Option<ConfigPoint>> = points.iter().copied().map(Some).collect();
            jobs.push(None);
            let outputs: Vec<(Option<ConfigPoint>, RunOutput)> = jobs
                .into_par_iter()
                .map(|point| {
                    let c = job_config(base, seed, point);
                    let label = match point {
                        Some(p) => format!("online_rft_t{}_tau{}", p.temperature, p.threshold),
                        None => "b_star".to_string(),
                    };
                    let dir = out.map(|o| o.join(format!("seed_{seed}")).join(label));
                    Ok((point, run_from(&c, &setup, initial.clone(), dir.as_deref())?))
                })
                .collect::<Result<_>>()?;
            let rows = outputs
                .iter()
                .map(|(p, o)| {
                    let variant = if p.is_some() {
                        LoopVariant::OnlineRft
                    } else {
                        LoopVariant::BStar
                    };
                    row(seed, variant, *p, o)
                })
                .collect::<Result<Vec<_>>>()?;
            let b_star = &outputs.last().expect("b_star job").1;
            Ok((rows, shared_probe(seed, &points, b_star)))
        })
        .collect::<Result<_>>()?;
    let mut comparison = Comparison {
        rows: Vec::new(),
        shared_probe: Vec::new(),
    };
    for (rows, shared) in per_seed {
        comparison.rows.extend(rows);
        comparison.shared_probe.extend(shared);
    }
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        write_csv(&o.join("comparison.csv"), &comparison.rows)?;
        write_csv(&o.join("shared_probe.csv"), &comparison.shared_probe)?;
        let manifest = serde_json::json!({
            "format": "bstar-compare/1",
            "seeds": section.seeds,
            "points": points.len(),
            "rows": comparison.rows.len(),
            "files": ["comparison.csv", "shared_probe.csv"],
        });
        let path = o.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(comparison)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
