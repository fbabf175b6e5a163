use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stt_core::strategy::StrategyKind;

#[derive(Debug, Parser)]
#[command(
    name = "stt-lab",
    version,
    about = "Soft template tuning experiments on a toy masked language model"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic classification task, a pre-training corpus and a task config.
    Gen(GenArgs),
    /// Pre-train the toy masked language model on a corpus.
    Pretrain(PretrainArgs),
    /// Run the multi-seed few-shot protocol for one strategy.
    Adapt(AdaptArgs),
    /// Sweep prompt length or K and write long-format CSV.
    Sweep(SweepArgs),
    /// Print trainable parameter counts per strategy.
    CountParams(CountArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Finetune,
    Prompt,
    Prefix,
    Stt,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Finetune => StrategyKind::FineTune,
            StrategyArg::Prompt => StrategyKind::PromptTune,
            StrategyArg::Prefix => StrategyKind::PrefixTune,
            StrategyArg::Stt => StrategyKind::Stt,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of labeled examples.
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Correlation strength between content words and labels, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    #[arg(long, default_value_t = 4000)]
    pub corpus_size: usize,
    /// Fraction of corpus sentences followed by a verdict clause.
    #[arg(long, default_value_t = 1.0)]
    pub verdict_rate: f64,
    /// Output directory for dataset.tsv, corpus.txt and task.toml.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Corpus file, one sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Task config whose template and label words must be in the vocabulary.
    #[arg(long)]
    pub task_config: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.15)]
    pub mask_rate: f64,
    /// Longest block of filler rows inserted after [CLS] during pre-training.
    #[arg(long, default_value_t = 0)]
    pub gap_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub ffn_mult: usize,
    #[arg(long, default_value_t = 64)]
    pub max_positions: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_vocab: usize,
    /// Fraction of corpus lines held out for perplexity.
    #[arg(long, default_value_t = 0.1)]
    pub heldout_fraction: f64,
    /// Output directory for model.ckpt and vocab.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "stt")]
    pub strategy: StrategyArg,
    /// Training examples per class.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [13u64, 21, 42, 87, 100])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 25)]
    pub prompt_length: usize,
    /// Freeze the LM head under STT.
    #[arg(long)]
    pub no_train_lm_head: bool,
    #[arg(long, default_value_t = 50)]
    pub dev_eval_every: usize,
    /// Keep the final checkpoint instead of the best on dev.
    #[arg(long)]
    pub no_dev_selection: bool,
    /// Place the soft prompt before [CLS] instead of after it.
    #[arg(long)]
    pub prompt_before_cls: bool,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Seed-parallel worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file; defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Task config file; defaults to the bundled tasks.
    #[arg(long)]
    pub task_config: Option<PathBuf>,
    /// Task name; may be omitted when the config holds a single task.
    #[arg(long)]
    pub task: Option<String>,
    /// Labeled dataset, tab-separated.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Explicit test split; otherwise each episode tests on its remainder.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Dataset files start with a header line.
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    PromptLength,
    K,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Prompt lengths for a prompt-length sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 15, 20, 25, 30])]
    pub lengths: Vec<usize>,
    /// K values for a K sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 16, 64])]
    pub ks: Vec<usize>,
    /// Strategies for a K sweep; defaults to --strategy.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub strategies: Vec<StrategyArg>,
    /// Output directory for sweep.csv, sweep.json and summary.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long, value_enum, default_value = "stt")]
    pub strategy: StrategyArg,
    /// Use d=1024, L=24, V=50265 shapes and compare against the published table.
    #[arg(long)]
    pub roberta_large_shapes: bool,
    /// Read the model config from a checkpoint.
    #[arg(long, conflicts_with = "roberta_large_shapes")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Number of label words (STT); defaults to --classes.
    #[arg(long)]
    pub label_words: Option<usize>,
    #[arg(long, default_value_t = 25)]
    pub prompt_length: usize,
    #[arg(long)]
    pub no_train_lm_head: bool,
    /// Toy config vocabulary size when no checkpoint is given.
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}
