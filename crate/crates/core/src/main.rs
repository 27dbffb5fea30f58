use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use calset::config::Config;
use calset::model::PoolKind;
use calset::pipeline::{toy, Run};
use calset::selection::{catalog, StrategyId};

#[derive(Parser)]
#[command(name = "calset", version, about = "Candidate pools, calibration-set selection and loss evaluation")]
struct Cli {
    /// TOML config; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding stage artifacts and the manifest.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Overrides both the pool seed and the selection seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Use in-process stubs instead of the configured services (also CALSET_OFFLINE=1).
    #[arg(long, global = true)]
    offline: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct KindArg {
    #[arg(long, value_parser = parse_kind)]
    kind: PoolKind,
}

#[derive(Args)]
struct StrategyArgs {
    #[command(flatten)]
    kind: KindArg,

    /// Repeatable; defaults to the config's strategy.
    #[arg(long)]
    strategy: Vec<StrategyId>,

    /// Every catalog strategy for the pool kind.
    #[arg(long, conflicts_with = "strategy")]
    all: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the extrinsic-swap entity index from the corpus.
    IndexEntities,
    /// Build candidate pools.
    Pool(KindArg),
    /// Compute metrics for every candidate.
    Score {
        #[command(flatten)]
        kind: KindArg,
        /// Token log-probabilities: `{"candidate_id", "token_logprobs"}` per line.
        #[arg(long)]
        logprobs: Option<PathBuf>,
        /// Fill missing log-probabilities with offline stand-ins.
        #[arg(long)]
        fill_logprobs: bool,
    },
    /// Fit normalization stats and fill the aggregates.
    Normalize {
        #[command(flatten)]
        kind: KindArg,
        /// Precomputed stats file instead of fitting.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Select calibration sets.
    Select(StrategyArgs),
    /// Set statistics for selected sets.
    Stats(StrategyArgs),
    /// Calibration and MLE losses for selected sets.
    LossEval {
        #[command(flatten)]
        strategies: StrategyArgs,
        /// Latent vectors: `{"candidate_id", "h": [..]}` per line.
        #[arg(long)]
        latents: Option<PathBuf>,
    },
    /// Tabulate statistics and correlate them with downstream results.
    Report {
        #[command(flatten)]
        kind: KindArg,
        /// JSON object of strategy id to downstream metric.
        #[arg(long)]
        downstream: Option<PathBuf>,
    },
    /// Run every stage on the bundled toy corpus, offline.
    Toy,
}

fn parse_kind(s: &str) -> Result<PoolKind, String> {
    match s {
        "relevance" => Ok(PoolKind::Relevance),
        "faithfulness" => Ok(PoolKind::Faithfulness),
        other => Err(format!("unknown pool kind {other:?}; expected relevance or faithfulness")),
    }
}

impl StrategyArgs {
    fn resolve(&self, config: &Config) -> Vec<StrategyId> {
        if self.all {
            catalog(self.kind.kind).to_vec()
        } else if self.strategy.is_empty() {
            vec![config.selection.strategy]
        } else {
            self.strategy.clone()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Toy = cli.command {
        let run = toy::run(&cli.workdir)?;
        for kind in [PoolKind::Faithfulness, PoolKind::Relevance] {
            println!("{}", std::fs::read_to_string(run.report_path(kind))?);
        }
        return Ok(());
    }
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.selection.seed = seed;
    }
    let run = Run::new(&cli.workdir, config, cli.offline);
    match &cli.command {
        Command::IndexEntities => {
            let n = run.index_entities()?;
            println!("{n} entity surfaces");
        }
        Command::Pool(k) => {
            let n = run.pool(k.kind)?;
            println!("{n} candidates");
        }
        Command::Score { kind, logprobs, fill_logprobs } => {
            let n = run.score(kind.kind, logprobs.as_deref(), *fill_logprobs)?;
            println!("{n} candidates scored");
        }
        Command::Normalize { kind, stats } => {
            let fitted = run.normalize(kind.kind, stats.as_deref())?;
            println!("{} metrics normalized", fitted.metrics.len());
        }
        Command::Select(s) => {
            let n = run.select(s.kind.kind, &s.resolve(&run.config))?;
            println!("{n} sets selected");
        }
        Command::Stats(s) => {
            for row in run.stats(s.kind.kind, &s.resolve(&run.config))? {
                let cells: Vec<String> = row.statistics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("{}\t{}", row.label, cells.join(" "));
            }
        }
        Command::LossEval { strategies, latents } => {
            let reports = run.loss_eval(strategies.kind.kind, &strategies.resolve(&run.config), latents.as_deref())?;
            for r in reports {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Command::Report { kind, downstream } => {
            print!("{}", run.report(kind.kind, downstream.as_deref())?);
        }
        Command::Toy => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli).context("calset failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
