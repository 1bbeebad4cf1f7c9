use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swipeforge_core::pipeline::TaskKind;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(
    name = "swipeforge",
    version,
    about = "Gesture typing: synthesis, training, evaluation and decoding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize noisy swipe traces for every word of a word list.
    Synth(SynthArgs),
    /// Train the path decoder on the training split of a trace file.
    TrainPath(TrainPathArgs),
    /// Train the transliteration model.
    TrainTranslit(TrainTranslitArgs),
    /// Train the spelling corrector on synthetic corruptions of a vocabulary.
    TrainCorrect(TrainCorrectArgs),
    /// Evaluate a trained pipeline on a split of a trace file.
    Eval(EvalArgs),
    /// Accuracy by word length and by 3-gram angle.
    Analyze(EvalArgs),
    /// Train and evaluate end to end with components disabled.
    Ablate(AblateArgs),
    /// Decode every trace in a trace file.
    Decode(DecodeArgs),
    /// Run the HTTP demo service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    EnglishToIndic,
    IndicToIndic,
}

impl From<Kind> for TaskKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::EnglishToIndic => TaskKind::EnglishToIndic,
            Kind::IndicToIndic => TaskKind::IndicToIndic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Bundled layout name or layout document path.
    #[arg(long)]
    pub layout: String,
    /// Word list: one word per line, or `source<TAB>target` lines.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Which lexicon column is typed on the layout.
    #[arg(long, value_enum, default_value = "source")]
    pub side: Side,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub per_word: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// No endpoint or via-point noise.
    #[arg(long)]
    pub noiseless: bool,
    /// JSON synthesis settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPathArgs {
    #[arg(long)]
    pub layout: String,
    #[arg(long)]
    pub traces: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// JSON path-decoder settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub head_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    /// Zero the derivative feature columns.
    #[arg(long)]
    pub zero_derivatives: bool,
    /// Train on every trace instead of the training split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct TrainTranslitArgs {
    /// Layout whose characters form the source alphabet.
    #[arg(long)]
    pub layout: String,
    /// `source<TAB>target` lexicon.
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained path decoder; sources are its outputs on `--traces`.
    #[arg(long, required_unless_present = "gold_sources")]
    pub path_checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "gold_sources")]
    pub traces: Option<PathBuf>,
    /// Train on the lexicon sources instead of path-decoder outputs.
    #[arg(long, conflicts_with_all = ["path_checkpoint", "traces"])]
    pub gold_sources: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Use the final encoder state instead of attention.
    #[arg(long)]
    pub no_attention: bool,
}

#[derive(Debug, Args)]
pub struct TrainCorrectArgs {
    /// One word per line.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Corruptions generated per vocabulary word.
    #[arg(long)]
    pub per_word: Option<usize>,
    /// Only single-character substitutions.
    #[arg(long)]
    pub substitutions_only: bool,
    /// Raw Euclidean distance instead of the dense scorer.
    #[arg(long)]
    pub euclidean: bool,
    /// Inputs (one per line) used to calibrate the fallback threshold.
    /// Defaults to fresh corruptions of the vocabulary.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    pub threshold_percentile: f64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Directory holding a `task.json` description.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "indic-to-indic")]
    pub kind: Kind,
    #[arg(long, default_value = "qwerty_en")]
    pub layout: String,
    #[arg(long, required_unless_present = "bundle")]
    pub path_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub translit_checkpoint: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    pub correct_checkpoint: Option<PathBuf>,
    #[arg(long, requires = "correct_checkpoint")]
    pub vocab: Option<PathBuf>,
    /// Candidates kept at each stage.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub traces: PathBuf,
    /// Maps typed words to expected outputs; without it the target is the
    /// typed word.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub layout: String,
    /// Word list or `source<TAB>target` lexicon.
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long, value_enum, default_value = "indic-to-indic")]
    pub kind: Kind,
    /// derivatives, attention, correction or dense; repeatable.
    #[arg(long = "switch", value_delimiter = ',')]
    pub switches: Vec<String>,
    /// Also run without any ablation.
    #[arg(long)]
    pub baseline: bool,
    /// Small noiseless settings that train in seconds.
    #[arg(long)]
    pub fixture: bool,
    /// JSON experiment settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub per_word: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trace file, one record per line.
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model directory: a `task.json` bundle or subdirectories of bundles.
    #[arg(long, env = "SWIPEFORGE_MODEL_DIR")]
    pub model_dir: PathBuf,
    #[arg(long, env = "SWIPEFORGE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Extra layout documents to serve.
    #[arg(long = "layout-file")]
    pub layout_files: Vec<PathBuf>,
    /// Per-request decode time budget in milliseconds.
    #[arg(long, default_value_t = 2000)]
    pub budget_ms: u64,
    /// Allowed CORS origin; any origin when absent.
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Append every decoded request as a trace record to this file.
    #[arg(long)]
    pub log_traces: Option<PathBuf>,
}
