//! Configuration, run orchestration, comparison suites and CSV export.

pub mod compare;
pub mod config;
pub mod export;
pub mod run;

pub use compare::{compare, CompareRow, Comparison};
pub use config::RunConfig;
pub use export::export;
pub use run::{run_experiment, RunOutput, Setup};

use std::path::Path;

use crate::controller::{self, SearchResult};
use crate::error::{Error, Result};
use crate::Policy;

/// Controller-only dry run: one grid search with `policy` (the warm-up
/// policy when `None`) on the configured probe set.
pub fn search_config(config: &RunConfig, policy: Option<Policy>) -> Result<SearchResult> {
    let grid = config
        .grid()?
        .ok_or_else(|| Error::Config("search-config requires a [controller] section".into()))?;
    let setup = Setup::new(config)?;
    let policy = match policy {
        Some(p) => p,
        None => setup.warm_up(config)?,
    };
    controller::search(
        &setup.task,
        &policy,
        &setup.reward,
        &setup.probe,
        &grid,
        config.probe_k(),
        config.n_star()?,
        crate::seed::derive(config.seed, "probe", 1),
    )
}

/// Writes the dry-run score table as `controller_scores.csv` under `out`.
pub fn write_search(out: &Path, result: &SearchResult) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(run::SCORES);
    let mut w = csv::Writer::from_path(&path)?;
    for row in controller::score_table_export(0, result) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
