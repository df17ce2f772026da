//! The `structembed` command line: corpus synthesis, Siamese training,
//! embedding export, probing and authorship attribution as batch commands.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;

/// A problem with the invocation, configuration or input files (exit 1), as
/// opposed to a failure while running (exit 2).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "structembed", version, about = "Structural word embeddings: training, probing and authorship attribution")]
pub struct Cli {
    /// `key = value` config file with one section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for all randomness ([run] seed, default 1).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic template corpus and the 4-author documents.
    Synth(SynthArgs),
    /// Parse a treebank-lines file and write linearized JSONL records.
    Linearize(LinearizeArgs),
    /// Build word and label vocabularies from a sentence corpus.
    BuildVocab(BuildVocabArgs),
    /// Train the Siamese encoders.
    Train(TrainArgs),
    /// Write the structural embedding table of a checkpoint.
    ExportEmbeddings(ExportArgs),
    /// Build co-occurrence (PPMI + SVD) embeddings as a lexical table.
    Cooccur(CooccurArgs),
    /// Generate probing task files.
    ProbeGen(ProbeGenArgs),
    /// Evaluate embedding tables on probing tasks.
    ProbeEval(ProbeEvalArgs),
    /// Train an attribution classifier.
    AttrTrain(AttrTrainArgs),
    /// Evaluate attribution classifiers on a test set.
    AttrEval(AttrEvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub docs_per_author: Option<usize>,
    #[arg(long)]
    pub sentences_per_doc: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub label_cap: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Directory with words.vocab and labels.vocab; built from the
    /// training split when absent.
    #[arg(long)]
    pub vocab_dir: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `desk` or `full` network sizes.
    #[arg(long)]
    pub preset: Option<String>,
    /// `f64` or `f32`.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct CooccurArgs {
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeGenArgs {
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Number of WC target words.
    #[arg(long)]
    pub wc_words: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeEvalArgs {
    #[arg(long)]
    pub tasks: Option<String>,
    /// Embedding table; repeat for several.
    #[arg(long = "embeddings")]
    pub embeddings: Vec<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttrTrainArgs {
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// `structural`, `lexical` or `structural+lexical`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub structural: Option<String>,
    #[arg(long)]
    pub lexical: Option<String>,
    /// Replace the structural table with frozen random vectors.
    #[arg(long)]
    pub random_structural: Option<bool>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AttrEvalArgs {
    /// Model file; repeat for several.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

/// Runs one command. Errors downcasting to [`Invalid`] are validation
/// failures.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut settings = config::Settings::load(cli.config.as_deref())?;
    let seed = settings.get("run", "seed", cli.seed, 1u64)?;
    settings.check_unknown(&["run"])?;
    commands::dispatch(cli.command, settings, seed)
}
