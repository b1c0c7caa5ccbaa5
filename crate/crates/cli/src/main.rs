//! Command-line driver for the toolforge pipeline.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use toolforge_core::corpus::write_fixtures;
use toolforge_core::hub::{serve_registry, ApiRegistry, ServiceConfig, ServiceMode, SimMode};
use toolforge_core::model::ToolSpec;
use toolforge_core::store::{
    read_jsonl, run_pipeline, BackendKind, PipelineConfig, Stage, StageOutcome,
};

#[derive(Parser)]
#[command(name = "toolforge", version, about = "Verified tool-use data pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration file.
    #[arg(long, default_value = "config.toml")]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the bundled mini-corpus, scripts, and config.
    Init {
        /// Target directory.
        #[arg(long, default_value = "golden")]
        out: PathBuf,
    },
    /// Probe APIs, refine documentation, and write the registry.
    Probe(StageArgs),
    /// Assess query feasibility and quality, then filter.
    VerifyQueries {
        #[command(flatten)]
        stage: StageArgs,
        /// Retention threshold on the 1-10 quality score.
        #[arg(long)]
        quality_threshold: Option<u8>,
    },
    /// Run verified episodes and admit trajectories.
    Forge(StageArgs),
    /// Mine reflection instances from verified trajectories.
    Explore(StageArgs),
    /// Export interleaved SFT records.
    Export(StageArgs),
    /// Run an evaluation.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Serve the registry as a virtual API server.
    Serve {
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Simulation seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Dispatch mode.
        #[arg(long, default_value = "sim")]
        mode: String,
        /// Registry file of tool documents.
        #[arg(long, default_value = "registry.jsonl")]
        registry: PathBuf,
        /// Live upstream base URL (modes live/auto).
        #[arg(long)]
        live_base: Option<String>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Pass-rate evaluation over the verified dataset.
    Pass(EvalArgs),
    /// Pairwise win-rate evaluation over an answer-pair file.
    Win(EvalArgs),
    /// Forge the error-case benchmark (and judge responses when present).
    Refine(EvalArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Override the judge backend kind.
    #[arg(long, value_enum)]
    judge_backend: Option<BackendChoice>,
    /// Fraction of comparisons audited with swapped positions.
    #[arg(long)]
    swap_fraction: Option<f64>,
}

fn load_config(args: &StageArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn report(outcome: &StageOutcome) {
    let counts: Vec<String> = outcome
        .entry
        .counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let suffix = if outcome.no_op { " (no-op)" } else { "" };
    println!("{}: {}{}", outcome.stage, counts.join(" "), suffix);
}

fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<()> {
    let outcome = run_pipeline(config, stage)?;
    report(&outcome);
    Ok(())
}

fn apply_eval_overrides(config: &mut PipelineConfig, args: &EvalArgs) {
    if let Some(choice) = args.judge_backend {
        let entry = config.backends.entry("judge".into()).or_default();
        entry.kind = match choice {
            BackendChoice::Mock => BackendKind::Mock,
            BackendChoice::Http => BackendKind::Http,
        };
    }
    if let Some(fraction) = args.swap_fraction {
        config.eval.swap_fraction = fraction;
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    match Cli::parse().command {
        Command::Init { out } => {
            write_fixtures(&out)?;
            println!(
                "wrote mini-corpus, scripts, and config to {}",
                out.display()
            );
            Ok(())
        }
        Command::Probe(args) => run_stage(&load_config(&args)?, Stage::Probe),
        Command::VerifyQueries {
            stage,
            quality_threshold,
        } => {
            let mut config = load_config(&stage)?;
            if let Some(threshold) = quality_threshold {
                config.quality_threshold = threshold;
            }
            run_stage(&config, Stage::VerifyQueries)
        }
        Command::Forge(args) => run_stage(&load_config(&args)?, Stage::Forge),
        Command::Explore(args) => run_stage(&load_config(&args)?, Stage::Explore),
        Command::Export(args) => run_stage(&load_config(&args)?, Stage::Export),
        Command::Eval { which } => {
            let (args, stage) = match &which {
                EvalCommand::Pass(args) => (args, Stage::EvalPass),
                EvalCommand::Win(args) => (args, Stage::EvalWin),
                EvalCommand::Refine(args) => (args, Stage::EvalRefine),
            };
            let mut config = load_config(&args.stage)?;
            apply_eval_overrides(&mut config, args);
            run_stage(&config, stage)
        }
        Command::Serve {
            bind,
            seed,
            mode,
            registry,
            live_base,
        } => {
            let Some(mode) = ServiceMode::parse(&mode) else {
                bail!("unknown mode `{mode}` (expected live, sim, or auto)");
            };
            let specs: Vec<ToolSpec> = read_jsonl(&registry)
                .with_context(|| format!("loading {}", registry.display()))?;
            if specs.is_empty() {
                bail!("registry {} is empty", registry.display());
            }
            let registry = Arc::new(ApiRegistry::from_specs(specs));
            let config = ServiceConfig {
                mode,
                sim: SimMode::Deterministic(seed),
                live_base,
                upstream_timeout: std::time::Duration::from_secs(10),
            };
            let service = serve_registry(registry, config, &bind)?;
            println!("serving on {} (mode {mode:?})", service.base_url());
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
    }
}
