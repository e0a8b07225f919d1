//! `sgrec`: batch driver over a shared run directory.

mod artifacts;
mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "sgrec", version, about = "Session recommendation through a graph-aware language model")]
struct Cli {
    /// Run configuration (flat `key = value` file); defaults apply to absent keys.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Directory holding every artifact of the run.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    /// Maximum worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override one config key (repeatable), e.g. `--set tune.lr=1e-3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// The standalone pretrained recommender (`sbr.ckpt`).
    Sbr,
    /// The tuned language-model recommender (`full.ckpt`).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptStage {
    Aux,
    Major,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Corpus {
    /// Each item has one fixed successor.
    Markov,
    /// Successors come from the next item group, which titles name.
    Grouped,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic interaction log and catalog.
    Synth {
        #[arg(long, value_enum, default_value = "markov")]
        kind: Corpus,
        #[arg(long)]
        users: Option<usize>,
        /// Output directory for `interactions.tsv` and `catalog.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter the interaction log and write the vocabulary and splits.
    Ingest,
    /// Train the session recommender alone; writes `sbr.ckpt`.
    Pretrain,
    /// Run the tuning stages of the configured strategy; writes `full.ckpt`.
    Tune,
    /// Rank held-out targets against sampled negatives; writes `metrics.csv`.
    Evaluate {
        #[arg(long, value_enum, default_value = "full")]
        model: ModelKind,
        /// Score the validation targets instead of the test targets.
        #[arg(long)]
        valid: bool,
    },
    /// Print tuning prompts, one block per instance.
    RenderPrompts {
        #[arg(long, value_enum, default_value = "major")]
        stage: PromptStage,
        /// Number of instances to print.
        #[arg(long, default_value_t = 10)]
        limit: usize,
        /// Render the behavior prompt for these comma-separated item ids
        /// instead of the training corpus.
        #[arg(long, value_delimiter = ',')]
        session: Option<Vec<String>>,
    },
    /// Project a checkpoint table onto two principal components; writes `pca.csv`.
    ExportEmbeddings {
        #[arg(long, value_enum, default_value = "sbr")]
        checkpoint: ModelKind,
        #[arg(long, default_value = "sbr.item_embeddings")]
        table: String,
    },
    /// Summarize the interaction log.
    Stats {
        /// Describe the log before inactive users and items are removed.
        #[arg(long)]
        raw: bool,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size the thread pool: {e}")))?;
    }
    let cfg = commands::load_config(cli.config.as_deref(), &cli.overrides)?;
    let ctx = commands::Context {
        cfg,
        run_dir: cli.run_dir,
    };
    match cli.command {
        Command::Synth { kind, users, out } => commands::synth(&ctx, kind, users, &out),
        Command::Ingest => commands::ingest(&ctx),
        Command::Pretrain => commands::pretrain(&ctx),
        Command::Tune => commands::tune(&ctx),
        Command::Evaluate { model, valid } => commands::evaluate(&ctx, model, valid),
        Command::RenderPrompts { stage, limit, session } => commands::render_prompts(&ctx, stage, limit, session),
        Command::ExportEmbeddings { checkpoint, table } => commands::export_embeddings(&ctx, checkpoint, &table),
        Command::Stats { raw } => commands::stats(&ctx, raw),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}
