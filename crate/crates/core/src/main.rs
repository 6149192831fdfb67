use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use bstar::experiment::{self, config::CompareSection, RunConfig};
use bstar::trainer::LoopVariant;

#[derive(Parser)]
#[command(name = "bstar", version, about = "Balanced self-taught reasoning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Loop variant override (sft, rest_em, iterative_rft, online_rft, b_star).
    #[arg(long)]
    variant: Option<LoopVariant>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Warm-up followed by the configured iterations.
    Run(Common),
    /// Fixed-configuration online RFT against B-STaR.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; overrides [compare].seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// CSV bundles from a finished run directory.
    Export {
        /// Run directory containing stats.jsonl.
        run_dir: PathBuf,
        /// Destination; defaults to <run_dir>/export.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One controller grid search without training.
    SearchConfig {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint to score; the warm-up policy when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(variant) = common.variant {
        config.variant = variant;
        if variant == LoopVariant::BStar && config.controller.is_none() {
            anyhow::bail!("variant b_star requires a [controller] section in the configuration");
        }
    }
    // Overrides go through the same validation as the file.
    let origin = common
        .config
        .as_deref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<defaults>".into());
    Ok(RunConfig::from_toml(&config.to_toml(), &origin)?)
}

fn run(common: &Common) -> Result<()> {
    let config = load(common)?;
    let output = experiment::run_experiment(&config, Some(&common.out))?;
    let last = output.final_eval();
    println!(
        "{} seed {}: warm-up pass@1 {:.4} -> final pass@1 {:.4} (pass@K {:.4}, diversity {:.4}); artifacts in {}",
        config.variant.as_str(),
        config.seed,
        output.warmup_eval.pass_at_1,
        last.pass_at_1,
        last.pass_at_k,
        last.diversity,
        common.out.display()
    );
    Ok(())
}

fn compare(common: &Common, seeds: &[u64]) -> Result<()> {
    let mut config = load(common)?;
    let mut section: CompareSection = config.compare.take().unwrap_or_default();
    if !seeds.is_empty() {
        section.seeds = seeds.to_vec();
    }
    let result = experiment::compare(&config, &section, Some(&common.out))?;
    for r in &result.rows {
        let point = match (r.temperature, r.threshold) {
            (Some(t), Some(tau)) => format!("T={t:<4} tau={tau:<5}"),
            _ => format!("{:<16}", "b_star"),
        };
        println!(
            "seed {:<3} {point} pass@1 {:.4} balance {:.4} diversity {:.4}",
            r.seed, r.final_pass_at_1, r.mean_balance_score, r.final_diversity
        );
    }
    println!("{} rows written to {}", result.rows.len(), common.out.join("comparison.csv").display());
    Ok(())
}

fn export(run_dir: &Path, out: Option<&Path>) -> Result<()> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("export"));
    let bundle = experiment::export(run_dir, &out).with_context(|| format!("exporting {}", run_dir.display()))?;
    println!("wrote {}", bundle.metrics.display());
    println!("wrote {}", bundle.trajectory.display());
    if let Some(p) = bundle.score_tables {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn search_config(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let config = load(common)?;
    let policy = checkpoint.map(experiment::run::load_checkpoint).transpose()?;
    let result = experiment::search_config(&config, policy)?;
    experiment::write_search(&common.out, &result)?;
    println!(
        "best temperature {} threshold {} (avg balance score {:.6}) over {} points; table in {}",
        result.best.temperature,
        result.best.threshold,
        result.score,
        result.table.len(),
        common.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(common) => run(common),
        Command::Compare { common, seeds } => compare(common, seeds),
        Command::Export { run_dir, out } => export(run_dir, out.as_deref()),
        Command::SearchConfig { common, checkpoint } => search_config(common, checkpoint.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
