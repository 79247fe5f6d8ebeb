//! `parasent`: train and evaluate paraphrastic sentence embeddings.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use parasent_core::Error;

#[derive(Parser)]
#[command(
    name = "parasent",
    version,
    about = "Paraphrastic sentence embeddings: averaging, peephole LSTM, and gated recurrent averaging encoders with margin-based and supervised objectives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on paraphrase pairs with the margin objective
    TrainTransfer(TrainTransferArgs),
    /// Train the similarity head on scored pairs with the KL objective
    TrainSupervised(TrainSupervisedArgs),
    /// Score similarity datasets, or select among evaluation reports
    Evaluate(EvaluateArgs),
    /// Print sentence embeddings for each input line
    Embed(EmbedArgs),
    /// Certify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Aggregate gate norms over a tagged corpus
    AnalyzeGates(AnalyzeGatesArgs),
}

/// Encoder selection shared by the commands that build a fresh model.
#[derive(Args, Debug)]
struct EncoderArgs {
    /// Encoder kind: avg, lstm, lstmavg, gran1..gran5
    #[arg(long)]
    encoder: Option<String>,
    /// Hidden size of the recurrent encoders (defaults to the word
    /// vector dimension)
    #[arg(long)]
    hidden: Option<usize>,
    /// Run the encoder in both directions
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    bidirectional: Option<bool>,
    /// How to merge direction embeddings: sum or tanh
    #[arg(long)]
    combine: Option<String>,
}

/// Training hyperparameters shared by both objectives.
#[derive(Args, Debug)]
struct TrainArgs {
    /// Margin of the contrastive objective
    #[arg(long)]
    delta: Option<f64>,
    /// L2 penalty weight on the compositional parameters
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Drift penalty weight anchoring word vectors
    #[arg(long)]
    lambda_w: Option<f64>,
    /// Dropout rate on word embeddings
    #[arg(long)]
    dropout: Option<f64>,
    /// Whole-word dropout rate
    #[arg(long)]
    word_dropout: Option<f64>,
    /// Probability of scrambling both sentences of a pair
    #[arg(long)]
    scramble: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Prepend a start tag to every sentence
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sos: Option<bool>,
    /// Append an end tag to every sentence
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    eos: Option<bool>,
}

#[derive(Args, Debug)]
struct TrainTransferArgs {
    /// Flat key = value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Word embedding file (token then floats, space separated)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Pair corpus: sentence1 TAB sentence2 per line
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Where to write the trained checkpoint
    #[arg(long)]
    save: Option<PathBuf>,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct TrainSupervisedArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Scored pairs: sentence1 TAB sentence2 TAB gold
    #[arg(long)]
    train: Option<PathBuf>,
    /// Scored pairs used for per-epoch model selection
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    save: Option<PathBuf>,
    /// Warm-start checkpoint: initialize and regularize back to it
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    /// Score ceiling K (gold scores live in [1, K])
    #[arg(long)]
    k: Option<usize>,
    /// Hidden size of the similarity head
    #[arg(long)]
    head_hidden: Option<usize>,
    /// Gold score mapping: direct, or sts05 for 0-5 scores
    #[arg(long)]
    score_map: Option<String>,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    train_args: TrainArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest of dataset groups: `group: file1, file2, ...`
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also map predictions onto the 0-5 scale
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    scale: Option<bool>,
    /// Write the per-dataset report TSV here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration label recorded in the report (defaults to the
    /// checkpoint path)
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Select among previously written report TSVs instead of scoring
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    aggregate: Option<bool>,
    /// Selection mode for --aggregate: test or oracle
    #[arg(long)]
    mode: Option<String>,
    /// Held-out group used by test selection and excluded from the
    /// oracle average
    #[arg(long)]
    held_out: Option<String>,
    /// Report TSVs to select among (with --aggregate)
    reports: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Trained checkpoint; without one, a seeded fresh encoder embeds
    /// with the loaded word vectors
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input file: one pre-tokenized sentence per line
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sos: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    eos: Option<bool>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder kind to certify
    #[arg(long)]
    encoder: Option<String>,
    /// Objective to certify: margin or kl
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    bidirectional: Option<bool>,
    /// Word vector dimension of the random instances
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Central-difference step
    #[arg(long)]
    step: Option<f64>,
    /// Coordinate subsample cap per instance (0 checks all)
    #[arg(long)]
    max_coords: Option<usize>,
    /// Maximum relative error to accept
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct AnalyzeGatesArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Tagged corpus: blank-line-separated records of
    /// ID TAB FORM TAB POS TAB HEAD TAB DEPREL
    #[arg(long)]
    tagged: Option<PathBuf>,
    /// Aggregation key: pos, dep, or posxdep
    #[arg(long)]
    group_by: Option<String>,
    /// Skip sentences longer than this many tokens
    #[arg(long)]
    cap: Option<usize>,
    /// Print only the top N rows
    #[arg(long)]
    top: Option<usize>,
    /// Print only the bottom N rows
    #[arg(long)]
    bottom: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if err.use_stderr() {
                eprint!("{err}");
                std::process::exit(1);
            }
            // --help and --version print to stdout and exit 0
            err.exit();
        }
    };
    let result = match cli.command {
        Command::TrainTransfer(args) => commands::train_transfer(args),
        Command::TrainSupervised(args) => commands::train_supervised(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Embed(args) => commands::embed(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::AnalyzeGates(args) => commands::analyze_gates(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
