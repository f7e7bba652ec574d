//! `convrec`: synthetic corpora, chronological splits, training,
//! evaluation, ablations, report rendering and a demo chat loop.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data validation
//! error, 4 numeric failure.

mod chat;
mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "convrec", version, about = "Multi-aspect conversational recommender toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Rec,
    Dial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartArg {
    Train,
    Val,
    Test,
}

impl From<PartArg> for convrec_core::corpus::Part {
    fn from(p: PartArg) -> Self {
        match p {
            PartArg::Train => convrec_core::corpus::Part::Train,
            PartArg::Val => convrec_core::corpus::Part::Val,
            PartArg::Test => convrec_core::corpus::Part::Test,
        }
    }
}

#[derive(clap::Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat key-value config file with [section] headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single values, e.g. --set model.dim=64 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    /// Directory for the resolved config, version stamp and logs;
    /// defaults to $CONVREC_RUN_ROOT/<command>-seed<seed> when the
    /// environment variable is set.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file plus its generation manifest.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output corpus path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Generator seed.
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Chronologically split a corpus into train/val/test sessions.
    Split {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Validation sessions per eval user.
        #[arg(long, default_value_t = 1)]
        n_val: usize,
        /// Test sessions per eval user.
        #[arg(long, default_value_t = 1)]
        n_test: usize,
        /// Comma-separated eval user ids; defaults to sampling.
        #[arg(long, value_delimiter = ',')]
        eval_users: Vec<String>,
        /// Number of eval users to sample when none are given explicitly.
        #[arg(long, default_value_t = 0)]
        sample_eval_users: usize,
        /// Seed for eval-user sampling.
        #[arg(long, default_value_t = 17)]
        eval_seed: u64,
    },
    /// Train the recommendation or dialogue model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Recommendation checkpoint supplying frozen user vectors
        /// (dialogue target only).
        #[arg(long)]
        rec_checkpoint: Option<PathBuf>,
        /// Optionally dump the final look-alike snapshot store.
        #[arg(long)]
        dump_snapshots: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write the metrics document.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long, value_enum, default_value = "test")]
        part: PartArg,
        #[arg(long)]
        out: PathBuf,
        /// Recommendation checkpoint for user vectors (dialogue target).
        #[arg(long)]
        rec_checkpoint: Option<PathBuf>,
        /// Dump file for generated sequences (dialogue target).
        #[arg(long)]
        gen_dump: Option<PathBuf>,
    },
    /// Train and evaluate a set of ablation variants.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Comma-separated variants; each is `baseline` or a `+`-joined
        /// switch set like no_entity+no_lookalike.
        #[arg(long, value_delimiter = ',', default_value = "baseline,no_entity,no_word,no_item,no_historical,no_lookalike,no_historical+no_lookalike")]
        variants: Vec<String>,
        #[arg(long, value_enum, default_value = "test")]
        part: PartArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactive recommendation + generation session over stdin.
    Chat {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        rec_checkpoint: PathBuf,
        #[arg(long)]
        dial_checkpoint: PathBuf,
        /// Act as this corpus user (their sessions become history);
        /// defaults to a fresh visitor with no history.
        #[arg(long)]
        user: Option<String>,
        /// Transcript output path.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Render a metrics document as a human-readable table.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

/// An error tagged with the process exit code.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }

    pub fn data(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }

    pub fn numeric(error: anyhow::Error) -> Self {
        Failure { code: 4, error }
    }
}

pub type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth { config, out, seed } => commands::cmd_synth(config, out, seed),
        Command::Split {
            config,
            corpus,
            out,
            n_val,
            n_test,
            eval_users,
            sample_eval_users,
            eval_seed,
        } => commands::cmd_split(config, corpus, out, n_val, n_test, eval_users, sample_eval_users, eval_seed),
        Command::Train { config, corpus, split, target, out, rec_checkpoint, dump_snapshots } => {
            commands::cmd_train(config, corpus, split, target, out, rec_checkpoint, dump_snapshots)
        }
        Command::Eval {
            config,
            corpus,
            split,
            checkpoint,
            target,
            part,
            out,
            rec_checkpoint,
            gen_dump,
        } => commands::cmd_eval(config, corpus, split, checkpoint, target, part, out, rec_checkpoint, gen_dump),
        Command::Ablate { config, corpus, split, variants, part, out } => {
            commands::cmd_ablate(config, corpus, split, variants, part, out)
        }
        Command::Chat { config, corpus, rec_checkpoint, dial_checkpoint, user, transcript } => {
            chat::cmd_chat(config, corpus, rec_checkpoint, dial_checkpoint, user, transcript)
        }
        Command::Report { metrics } => commands::cmd_report(metrics),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
