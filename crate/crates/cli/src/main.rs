mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::config::{parse_override, ConfigErrors};

/// Peptide generation pipeline: descriptors, classifier, generator
/// training, reinforcement tuning, screening and evaluation.
#[derive(Parser, Debug)]
#[command(name = "ampforge", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed; every module draws from a named substream of it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true, env = "AMPFORGE_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Override any config value, e.g. `--set ppo.iterations=10`. The value
    /// is read as JSON when it parses, otherwise as a string. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, Value)>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Physicochemical descriptors for every sequence in a FASTA file.
    Props {
        #[arg(long)]
        input: PathBuf,
    },
    /// Length filtering, deduplication, identity clustering and a
    /// cluster-level train/val/test split.
    Dataprep {
        /// FASTA (generator corpus) or `.tsv` with `sequence<TAB>label` rows.
        #[arg(long)]
        input: PathBuf,
        /// Precomputed `sequence_id<TAB>cluster_id` assignments.
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Train the activity classifier on labelled TSV files.
    TrainMic {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Held-out set for the reported metrics (validation set otherwise).
        #[arg(long)]
        test: Option<PathBuf>,
        /// JSONL `{sequence, vector}` table; builtin features otherwise.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Score sequences with a trained classifier.
    ScoreMic {
        #[arg(long)]
        model: PathBuf,
        /// FASTA or labelled TSV.
        #[arg(long)]
        input: PathBuf,
        /// Replacement for the embedding table stored with the model.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Supervised next-token training of the generator.
    Sft {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
    },
    /// Draw sequences from a generator checkpoint.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Number of draws (overrides sample.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Reinforcement tuning of a generator against the activity reward.
    Rl {
        #[arg(long)]
        sft_checkpoint: PathBuf,
        #[arg(long)]
        mic_model: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Overrides ppo.iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Threshold screening, novelty filtering against a reference set,
    /// prioritisation and optional diversity selection.
    Screen {
        /// FASTA (requires --mic-model) or annotated records (`.tsv`/`.jsonl`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mic_model: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Reference FASTA for the novelty filter; skipped when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// TSV with a `sequence` column followed by one column per scorer.
        #[arg(long)]
        external_scores: Option<PathBuf>,
        /// Overrides screen.diversity_k.
        #[arg(long)]
        diversity_k: Option<usize>,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Sample a unique library from a generator, then annotate and screen it.
    BuildLibrary {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mic_model: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        external_scores: Option<PathBuf>,
        /// Overrides library.target_count.
        #[arg(long)]
        target_count: Option<usize>,
    },
    /// Compare generated sets with a reference set.
    Eval {
        /// Generated FASTA, optionally `name=path`. Repeatable.
        #[arg(long, required = true)]
        generated: Vec<String>,
        #[arg(long)]
        reference: PathBuf,
        /// Also write the raw embeddings of every set.
        #[arg(long)]
        write_embeddings: bool,
    },
    /// Kinetic summaries and median-split categories of fluorescence series.
    Assay {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Copy)]
pub struct FormatArg {
    /// Record format for screened outputs.
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Jsonl,
}

/// Errors attributable to how the program was invoked.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<ConfigErrors>() || e.is::<UsageError>() {
        return 2;
    }
    match e.downcast_ref::<ampforge::Error>() {
        Some(ampforge::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
