//! `selftrain`: every pipeline stage as a subcommand.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, unreadable or
//! invalid config) and 2 for data or model errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "selftrain",
    version,
    about = "Pseudo-labeling and self-training for speech translation"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for decoding and sweeps; the config's `sweep.jobs` applies when omitted.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract features for a manifest's WAV files and apply the length filter.
    Prepare(PrepareArgs),
    /// Generate the synthetic task and train its labelers.
    Synth(SynthArgs),
    /// Train, apply or invert a subword model.
    #[command(subcommand)]
    Tokenize(TokenizeCmd),
    /// Train an ST, ASR or MT model, or an n-gram LM.
    Train(TrainArgs),
    /// Pseudo-label an unlabeled pool with a configured labeler.
    Label(LabelArgs),
    /// Combine baseline data with (a sample of) pseudo-labeled data.
    Mix(MixArgs),
    /// Continue training a checkpoint on clean data, keeping its optimizer state.
    Finetune(FinetuneArgs),
    /// Grid-search CTC decoding weights on a dev set.
    TuneDecoder(TuneArgs),
    /// Score hypotheses, or decode a manifest and score it.
    Evaluate(EvaluateArgs),
    /// Run every (hours, variant, finetune, seed) condition of a config.
    Sweep(SweepArgs),
    /// Run the encoder-pretraining, labeler and label-quality ablations.
    Ablate(SweepArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Input manifest whose audio paths point at WAV files or feature caches.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for extracted feature caches.
    #[arg(long, default_value = "features")]
    pub features_dir: PathBuf,
    /// Count target tokens with this tokenizer when filtering.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Keep every record instead of applying the 20..4000-frame, 256-token filter.
    #[arg(long)]
    pub no_filter: bool,
    /// Feature settings (TOML); defaults to 80 log-mel bins, 25 ms windows, 10 ms shift.
    #[arg(long)]
    pub feature_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives manifests, features, models and `exp.toml`.
    #[arg(long)]
    pub out: PathBuf,
    /// Desk settings (TOML). Unset fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Emission noise of the synthetic channel.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Gold utterances in the low-resource baseline.
    #[arg(long)]
    pub baseline_utts: Option<usize>,
    /// Start from tiny sizes and budgets that only exercise the plumbing.
    #[arg(long, conflicts_with = "config")]
    pub smoke: bool,
    /// Write only the corpus; skip tokenizers, LM and labelers.
    #[arg(long)]
    pub corpus_only: bool,
    /// Print the effective desk settings as TOML and exit.
    #[arg(long)]
    pub show_config: bool,
}

#[derive(Subcommand, Debug)]
pub enum TokenizeCmd {
    /// Train a unigram subword model.
    Train {
        /// Training text: plain lines, or a manifest with `--field`.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = TextField::Lines)]
        field: TextField,
        /// Number of normal pieces; the 256 byte pieces come on top.
        #[arg(long, default_value_t = 10_000)]
        pieces: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the pieces of each input line.
    Encode {
        #[arg(long)]
        model: PathBuf,
        /// Input text; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Join space-separated pieces back into text.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TextField {
    /// Each line of a plain text file.
    Lines,
    Transcript,
    Translation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    St,
    Asr,
    Mt,
    Lm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Seq2seq,
    Ctc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Base,
    Large,
}

#[derive(Args, Debug, Clone)]
pub struct SetupArgs {
    /// Training settings (TOML with `schedule`, `adam`, `batch`, `stop`).
    #[arg(long)]
    pub setup: Option<PathBuf>,
    /// Overrides the learning rate [setup default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides the update budget [setup default: 20000].
    #[arg(long)]
    pub max_updates: Option<u64>,
    /// Overrides the frames (or source tokens) per batch [setup default: 20000].
    #[arg(long)]
    pub batch_frames: Option<u64>,
    /// Overrides the dev evaluation interval [setup default: 50].
    #[arg(long)]
    pub eval_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Dev manifest for early stopping.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output-side tokenizer: target for ST and MT, source for ASR.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Source tokenizer (MT only).
    #[arg(long)]
    pub src_tokenizer: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HeadArg::Seq2seq)]
    pub head: HeadArg,
    #[arg(long, value_enum, default_value_t = VariantArg::Base)]
    pub variant: VariantArg,
    /// Copy the encoder of this checkpoint before training.
    #[arg(long)]
    pub init_encoder: Option<PathBuf>,
    /// N-gram order (LM only).
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Output checkpoint, or ARPA file for `--task lm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Learning curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub setup: SetupArgs,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    /// Experiment config defining the labeler.
    #[arg(long)]
    pub config: PathBuf,
    /// Labeler name from the config.
    #[arg(long)]
    pub labeler: String,
    /// Unlabeled manifest; the config's pool when omitted.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Report label quality against a synthetic truth file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    /// Pseudo-labeled manifest.
    #[arg(long)]
    pub pseudo: PathBuf,
    /// Keep only a seeded sample of this many pool hours (needs `--pool`).
    #[arg(long, requires = "pool")]
    pub hours: Option<f64>,
    /// The unlabeled pool the pseudo labels came from.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Checkpoint to continue from (parameters and Adam moments).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clean training data, usually the baseline manifest.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Source tokenizer (MT only).
    #[arg(long)]
    pub src_tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub setup: SetupArgs,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// CTC acoustic model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Its source tokenizer.
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// ARPA language model; its words form the lexicon.
    #[arg(long)]
    pub lm: PathBuf,
    /// Dev manifest with transcripts.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
    pub lm_weights: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub word_bonuses: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub beam: usize,
    /// Write the full grid as CSV.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Bleu,
    Wer,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long, conflicts_with = "checkpoint")]
    pub hyp: Option<PathBuf>,
    /// References, one per line.
    #[arg(long, requires = "hyp")]
    pub reference: Option<PathBuf>,
    /// Same as `--reference`.
    #[arg(long = "ref", requires = "hyp", conflicts_with = "reference")]
    pub ref_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Metric::Bleu)]
    pub metric: Metric,
    /// Decode `--manifest` with this checkpoint instead of reading `--hyp`.
    #[arg(long, requires_all = ["manifest", "tokenizer"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// ARPA LM whose words form the lexicon (CTC checkpoints).
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub lm_weight: f64,
    #[arg(long, default_value_t = 20)]
    pub beam: usize,
    /// Write decoded hypotheses here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the full report (counts, precisions) as CSV.
    #[arg(long)]
    pub detail: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Experiment config (TOML); seeds come from its `[seeds]` section.
    #[arg(long)]
    pub config: PathBuf,
    /// Results CSV.
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
}

/// Command failure, mapped to the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl From<selftrain::Error> for Failure {
    fn from(e: selftrain::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
