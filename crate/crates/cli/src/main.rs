mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use docnade::deep::{Head, SplitMode};
use docnade::model::ModelKind;
use docnade::{CorpusFormat, Error};

#[derive(Parser)]
#[command(
    name = "docnade",
    version,
    about = "Train and apply DocNADE-family topic models on multimodal bag-of-words corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model, checkpoints, log and manifest to a run directory
    Train(TrainArgs),
    /// Re-run a train command from its manifest
    Rerun(RerunArgs),
    /// Evaluate a model on a corpus
    Eval(EvalArgs),
    /// Predict annotation words from the visual words of each document
    Annotate(AnnotateArgs),
    /// Rank collection documents by cosine similarity to each query
    Retrieve(RetrieveArgs),
    /// Show the topics and words most associated with a class
    Inspect(InspectArgs),
    /// Export document representations
    Represent(RepresentArgs),
    /// Select hyperparameters on a validation split
    Grid(GridArgs),
    /// Generate a synthetic corpus
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    TextSparse,
    RecordLines,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::TextSparse => CorpusFormat::TextSparse,
            FormatArg::RecordLines => CorpusFormat::RecordLines,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Docnade,
    Supdocnade,
    Deepdocnade,
    Supdeepdocnade,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Docnade => ModelKind::DocNade,
            KindArg::Supdocnade => ModelKind::SupDocNade,
            KindArg::Deepdocnade => ModelKind::DeepDocNade,
            KindArg::Supdeepdocnade => ModelKind::SupDeepDocNade,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Softmax,
    Sigmoid,
}

impl From<HeadArg> for Head {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Softmax => Head::Softmax,
            HeadArg::Sigmoid => Head::Sigmoid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    ExactPrefix,
    PerWordUniform,
}

impl From<SplitArg> for SplitMode {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::ExactPrefix => SplitMode::ExactPrefix,
            SplitArg::PerWordUniform => SplitMode::PerWordUniform,
        }
    }
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Corpus file
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "text-sparse")]
    format: FormatArg,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Root directory for run directories
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, value_enum)]
    model: KindArg,
    #[arg(long, value_enum, default_value = "softmax")]
    head: HeadArg,
    /// Hidden units per layer
    #[arg(long, default_value_t = 50)]
    hidden: usize,
    /// Hidden layers (deep models only)
    #[arg(long, default_value_t = 1)]
    layers: usize,
    /// Weight λ of the generative term
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Annotation word weight ρ (deep models)
    #[arg(long, default_value_t = 1.0)]
    anno_weight: f64,
    /// Dropout rate on hidden layers (deep models)
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Decay of the parameter average used at inference
    #[arg(long, default_value_t = 0.999)]
    avg_decay: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Unsupervised epochs on --unlabeled before supervised training
    #[arg(long, default_value_t = 0)]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "exact-prefix")]
    split_mode: SplitArg,
    /// Feed raw weighted histograms instead of unit-variance ones
    #[arg(long)]
    no_normalize: bool,
    /// Expected number of regions in the corpus vocabulary
    #[arg(long)]
    regions: Option<usize>,
}

impl TrainFlags {
    fn config(&self) -> docnade::trainer::TrainConfig {
        docnade::trainer::TrainConfig {
            model_kind: self.model.into(),
            head: self.head.into(),
            hidden: vec![self.hidden; self.layers],
            learning_rate: self.lr,
            lambda: self.lambda,
            rho: self.anno_weight,
            dropout_rate: self.dropout,
            epochs: self.epochs,
            pretrain_epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            averaging_decay: self.avg_decay,
            seed: self.seed,
            normalize_input: !self.no_normalize,
            split_mode: self.split_mode.into(),
            workers: self.workers,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Unlabeled corpus for pretraining (same format and vocabulary)
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RerunArgs {
    manifest: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Name recorded with each metric
    #[arg(long, default_value = "test")]
    split: String,
    /// Annotation words predicted per document for the F-measure
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Random orderings per document for perplexity
    #[arg(long, default_value_t = 1)]
    orderings: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query documents
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Collection to search (defaults to the query corpus)
    #[arg(long)]
    collection: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus whose vocabulary names the words
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 3)]
    topics: usize,
    #[arg(long, default_value_t = 10)]
    words: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepresentFormat {
    RecordLines,
    Svmlight,
}

#[derive(Args)]
struct RepresentArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "record-lines")]
    output: RepresentFormat,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// TOML file of hyperparameter lists
    #[arg(long)]
    grid: PathBuf,
    /// Fraction of documents held out for validation
    #[arg(long, default_value_t = 0.2)]
    validation: f64,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthVariant {
    Noisy,
    Deterministic,
}

#[derive(Args)]
struct SynthArgs {
    /// Output prefix; writes <prefix>-train and <prefix>-test corpora
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "text-sparse")]
    format: FormatArg,
    #[arg(long, default_value_t = 800)]
    train: usize,
    #[arg(long, default_value_t = 800)]
    test: usize,
    #[arg(long, value_enum, default_value = "noisy")]
    variant: SynthVariant,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Rerun(a) => commands::rerun(a),
        Command::Eval(a) => commands::eval(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Represent(a) => commands::represent(a),
        Command::Grid(a) => commands::grid(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
